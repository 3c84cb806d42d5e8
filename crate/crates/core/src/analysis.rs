//! Error metrics, convergence-rate fitting and contractivity diagnostics.
//!
//! Strong and weak terminal errors are the coupled-particle statistics
//!
//! ```text
//! eps_k = ( (1/N) sum_j (X_T^j - Xhat_T^j)^k )^(1/k),   k = 1, 2,
//! ```
//!
//! computed against a fine-step reference run on shared Brownian paths.  The
//! contractivity diagnostics compare the mean-square gap of two runs with
//! shared noise against the geometric envelope `D_0 (1 + beta h)^n`, where
//! `beta` is the one-step mean-square growth rate implied by the model's
//! structural constants.

use crate::engine::Trajectory;
use crate::model::ModelConstants;
use crate::reduce;
use crate::{Error, Real, Result};

/// One-step mean-square growth diagnosis for the split-step scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionRate<T: Real> {
    /// `alpha = -(1 + L_sigma + L_sigmahat + L_b + L_bhat) / 2`
    pub alpha: T,
    /// `beta = (2 (L_v - alpha) + h (L_b + L_bhat)) / (1 - 2 h L_v)`
    pub beta: T,
    /// True when `beta < 0`, i.e. the scheme contracts in mean square.
    pub contractive: bool,
    /// Largest step with `beta < 0`; `None` when every positive step works
    /// (no measure or space coupling in `b`).
    pub h_max: Option<T>,
}

/// Evaluate the growth rate `beta` and threshold `alpha` for a step `h`.
///
/// Requires `1 - 2 h L_v > 0`. The factor `1 + beta h` is positive whenever
/// the step-size rule of the implicit stage holds; contractivity additionally
/// needs `L_v < alpha` and, when `L_b + L_bhat > 0`, a step below
/// `h_max = -2 (L_v - alpha) / (L_b + L_bhat)`.
pub fn contraction_rate<T: Real>(consts: &ModelConstants<T>, h: T) -> Result<ContractionRate<T>> {
    let two = T::of(2.0);
    let denom = T::one() - two * h * consts.l_v;
    if !(h > T::zero()) {
        return Err(Error::Config(format!("step must be positive, got {h}")));
    }
    if !(denom > T::zero()) {
        return Err(Error::StepSize {
            l_v: consts.l_v.to_f64().unwrap_or(f64::NAN),
            h: h.to_f64().unwrap_or(f64::NAN),
            max_h: (0.5 / consts.l_v.to_f64().unwrap_or(f64::NAN)),
        });
    }
    let coupling = consts.l_b + consts.l_bhat;
    let alpha = -(T::one() + consts.l_sigma + consts.l_sigmahat + coupling) / two;
    let beta = (two * (consts.l_v - alpha) + h * coupling) / denom;
    let h_max = if consts.l_v < alpha && coupling > T::zero() {
        Some(-two * (consts.l_v - alpha) / coupling)
    } else {
        None
    };
    Ok(ContractionRate { alpha, beta, contractive: beta < T::zero(), h_max })
}

/// Signed weak error and root-mean-square strong error of one coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairErrors<T: Real> {
    pub eps1: T,
    pub eps2: T,
    /// False when any coupled pair involves a non-finite state; the errors are
    /// then non-finite as well.
    pub all_finite: bool,
}

/// Terminal errors between a scheme run and its reference on shared paths.
///
/// Both trajectories must hold the same particle count and terminal time; the
/// errors are computed per coupled particle on coordinate `coord`.
pub fn strong_weak_errors<T: Real>(
    approx: &Trajectory<T>,
    reference: &Trajectory<T>,
    coord: usize,
) -> Result<PairErrors<T>> {
    let a = approx.terminal();
    let r = reference.terminal();
    if a.len() != r.len() {
        return Err(Error::Dimension(format!(
            "coupled trajectories have {} and {} particles",
            a.len(),
            r.len()
        )));
    }
    if a.dim() != r.dim() || coord >= a.dim() {
        return Err(Error::Dimension(format!(
            "coordinate {coord} out of range for dimension {}",
            a.dim()
        )));
    }
    let ta = a.time().to_f64().unwrap();
    let tr = r.time().to_f64().unwrap();
    if (ta - tr).abs() > 1e-9 * ta.abs().max(1.0) {
        return Err(Error::Misaligned(format!(
            "terminal times differ: {ta} vs {tr}"
        )));
    }
    let n = a.len();
    let mut diffs: Vec<T> = (0..n)
        .map(|i| r.particle(i)[coord] - a.particle(i)[coord])
        .collect();
    let all_finite = diffs.iter().all(|d| d.is_finite());
    let mut squares: Vec<T> = diffs.iter().map(|d| *d * *d).collect();
    let inv_n = T::one() / T::of_usize(n);
    let eps1 = reduce::canonical_sum(&mut diffs) * inv_n;
    let eps2 = (reduce::canonical_sum(&mut squares) * inv_n).sqrt();
    Ok(PairErrors { eps1, eps2, all_finite })
}

/// Least-squares fit of `log eps` against `log h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit<T: Real> {
    pub slope: T,
    pub intercept: T,
    pub max_residual: T,
}

/// Ordinary least squares on `(log h, log eps)`; needs at least three grid
/// points and positive finite errors.
pub fn fit_rate<T: Real>(h_grid: &[T], errors: &[T]) -> Result<RateFit<T>> {
    if h_grid.len() != errors.len() {
        return Err(Error::Dimension("h grid and error list differ in length".into()));
    }
    if h_grid.len() < 3 {
        return Err(Error::Config("rate fit needs at least three grid points".into()));
    }
    if errors.iter().any(|e| !(*e > T::zero()) || !e.is_finite()) {
        return Err(Error::Numerical("rate fit needs positive finite errors".into()));
    }
    let n = T::of_usize(h_grid.len());
    let xs: Vec<T> = h_grid.iter().map(|h| h.ln()).collect();
    let ys: Vec<T> = errors.iter().map(|e| e.ln()).collect();
    let mean_x = xs.iter().fold(T::zero(), |a, x| a + *x) / n;
    let mean_y = ys.iter().fold(T::zero(), |a, y| a + *y) / n;
    let mut sxx = T::zero();
    let mut sxy = T::zero();
    for (x, y) in xs.iter().zip(ys.iter()) {
        sxx += (*x - mean_x) * (*x - mean_x);
        sxy += (*x - mean_x) * (*y - mean_y);
    }
    if sxx == T::zero() {
        return Err(Error::Config("rate fit needs distinct grid points".into()));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let max_residual = xs
        .iter()
        .zip(ys.iter())
        .map(|(x, y)| (*y - (intercept + slope * *x)).abs())
        .fold(T::zero(), |a, r| a.max(r));
    Ok(RateFit { slope, intercept, max_residual })
}

/// Closed-form mean and second moment of the mean-field Ornstein-Uhlenbeck
/// model `dX = (rho X + lambda E[X]) dt + nu dW`:
///
/// ```text
/// E[X_t]   = E[X_0] exp((rho + lambda) t)
/// E[X_t^2] = E[X_0^2] exp(2 (rho + lambda) t) + nu^2/(2 rho) (exp(2 rho t) - 1)
/// ```
///
/// with the `rho -> 0` limit `nu^2 t` for the fluctuation term.
pub fn ou_moments<T: Real>(rho: T, lambda: T, nu: T, e_x0: T, e_x0_sq: T, t: T) -> (T, T) {
    let two = T::of(2.0);
    let growth = ((rho + lambda) * t).exp();
    let mean = e_x0 * growth;
    let fluctuation = if rho == T::zero() {
        nu * nu * t
    } else {
        nu * nu / (two * rho) * ((two * rho * t).exp() - T::one())
    };
    (mean, e_x0_sq * growth * growth + fluctuation)
}

/// Mean-square gap diagnostics of two runs with shared noise.
#[derive(Debug, Clone)]
pub struct ContractivityReport<T: Real> {
    pub times: Vec<T>,
    /// `D_n = (1/N) sum_i |X_n^i - Z_n^i|^2`.
    pub gap: Vec<T>,
    /// `D_0 (1 + beta h)^n`.
    pub envelope: Vec<T>,
    pub alpha: T,
    pub beta: T,
    pub h_max: Option<T>,
    pub contractive: bool,
}

/// Cross-particle mean-square gap series plus its theoretical envelope.
///
/// Expectations over exchangeable particles are estimated by the
/// cross-particle average, so both trajectories need snapshots at every step.
pub fn contractivity_series<T: Real>(
    x: &Trajectory<T>,
    z: &Trajectory<T>,
    consts: &ModelConstants<T>,
    h: T,
) -> Result<ContractivityReport<T>> {
    if x.clouds().len() != z.clouds().len() || x.clouds().len() < 2 {
        return Err(Error::Config(
            "contractivity needs two equally-long trajectories with every-step snapshots".into(),
        ));
    }
    for (ct, cz) in x.times().iter().zip(z.times()) {
        if (*ct - *cz).abs() > T::of(1e-9) {
            return Err(Error::Misaligned("trajectory snapshot grids differ".into()));
        }
    }
    let rate = contraction_rate(consts, h)?;
    let n_clouds = x.clouds().len();
    let mut gap = Vec::with_capacity(n_clouds);
    for (cx, cz) in x.clouds().iter().zip(z.clouds()) {
        if cx.len() != cz.len() {
            return Err(Error::Dimension("particle counts differ between runs".into()));
        }
        let mut sq: Vec<T> = (0..cx.len())
            .map(|i| {
                cx.particle(i)
                    .iter()
                    .zip(cz.particle(i))
                    .fold(T::zero(), |acc, (a, b)| acc + (*a - *b) * (*a - *b))
            })
            .collect();
        gap.push(reduce::canonical_sum(&mut sq) / T::of_usize(cx.len()));
    }
    let factor = T::one() + rate.beta * h;
    let mut envelope = Vec::with_capacity(n_clouds);
    let mut value = gap[0];
    for _ in 0..n_clouds {
        envelope.push(value);
        value *= factor;
    }
    Ok(ContractivityReport {
        times: x.times().to_vec(),
        gap,
        envelope,
        alpha: rate.alpha,
        beta: rate.beta,
        h_max: rate.h_max,
        contractive: rate.contractive,
    })
}

/// Wasserstein-2 distance of two equally-sized one-dimensional empirical
/// measures: the optimal coupling in one dimension is monotone, so this is
/// the root-mean-square gap of the order statistics.
pub fn wasserstein2_1d<T: Real>(samples_a: &[T], samples_b: &[T]) -> Result<T> {
    if samples_a.len() != samples_b.len() || samples_a.is_empty() {
        return Err(Error::Dimension(
            "wasserstein2_1d needs equally many samples on both sides".into(),
        ));
    }
    let mut a = samples_a.to_vec();
    let mut b = samples_b.to_vec();
    reduce::canonical_order(&mut a);
    reduce::canonical_order(&mut b);
    let mut sq: Vec<T> = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (*x - *y) * (*x - *y))
        .collect();
    let n = T::of_usize(sq.len());
    Ok((reduce::canonical_sum(&mut sq) / n).sqrt())
}

/// Convergence study summary for one scheme.
#[derive(Debug, Clone)]
pub struct ErrorReport<T: Real> {
    pub scheme_label: String,
    pub h_grid: Vec<T>,
    pub weak: Vec<T>,
    pub strong: Vec<T>,
    pub all_finite: Vec<bool>,
    pub slope_weak: Option<RateFit<T>>,
    pub slope_strong: Option<RateFit<T>>,
    /// Description of the reference run these errors are measured against.
    pub reference: String,
}

impl<T: Real> ErrorReport<T> {
    /// Assemble a report and fit both rates where the data allows it
    /// (positive finite errors on at least three grid points).
    pub fn from_errors(
        scheme_label: String,
        reference: String,
        h_grid: Vec<T>,
        pairs: Vec<PairErrors<T>>,
    ) -> Self {
        let weak: Vec<T> = pairs.iter().map(|p| p.eps1).collect();
        let strong: Vec<T> = pairs.iter().map(|p| p.eps2).collect();
        let all_finite: Vec<bool> = pairs.iter().map(|p| p.all_finite).collect();
        let weak_abs: Vec<T> = weak.iter().map(|w| w.abs()).collect();
        let slope_weak = fit_rate(&h_grid, &weak_abs).ok();
        let slope_strong = fit_rate(&h_grid, &strong).ok();
        ErrorReport {
            scheme_label,
            h_grid,
            weak,
            strong,
            all_finite,
            slope_weak,
            slope_strong,
            reference,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin::{make_builtin, BuiltinModel, Params};
    use crate::engine::{Engine, SnapshotPolicy};
    use crate::noise::{InitialLaw, InitialSampler, NoiseTable, UtilityRng};
    use crate::schemes::{SchemeConfig, SchemeKind};

    #[test]
    fn contraction_rate_for_the_stability_model() {
        let spec = make_builtin(
            BuiltinModel::GinzburgLandauStability,
            &Params::<f64>::new().set("gamma", 0.0),
        )
        .unwrap();
        let rate = contraction_rate(&spec.constants, 0.01).unwrap();
        assert_eq!(rate.alpha, -1.5);
        assert_eq!(rate.h_max, Some(2.0));
        assert!(rate.contractive);
        // beta = (2 (-5/2 + 3/2) + 0.01) / (1 + 0.05)
        assert!((rate.beta - (-2.0 + 0.01) / 1.05).abs() < 1e-15);
    }

    #[test]
    fn contraction_rate_for_ou_matches_closed_form() {
        let cases: [(f64, f64); 3] = [(-1.0, 0.5), (-2.0, 1.0), (-0.8, 0.3)];
        for (rho, lambda) in cases {
            let spec = make_builtin(
                BuiltinModel::OrnsteinUhlenbeckMV,
                &Params::new().set("rho", rho).set("lambda", lambda).set("nu", 1.0),
            )
            .unwrap();
            let rate = contraction_rate(&spec.constants, 0.01).unwrap();
            let expected = -(2.0 * rho + 1.0 + lambda * lambda) / (lambda * lambda);
            match rate.h_max {
                Some(h_max) => assert!(
                    (h_max - expected).abs() < 1e-12,
                    "rho={rho} lambda={lambda}: {h_max} vs {expected}"
                ),
                None => assert!(expected <= 0.0 || rho >= rate.alpha),
            }
        }
    }

    #[test]
    fn pure_damping_contracts_for_every_step() {
        let consts = crate::model::ModelConstants::new(-1.0, 0.0, 0.0, 0.0, 0.0, 1, 0.0);
        for h in [0.01, 0.5, 10.0, 1e4] {
            let rate = contraction_rate(&consts, h).unwrap();
            assert_eq!(rate.alpha, -0.5);
            assert!(rate.beta < 0.0, "h={h}");
            assert_eq!(rate.h_max, None);
        }
    }

    #[test]
    fn growth_factor_stays_positive_on_valid_steps() {
        let mut rng = UtilityRng::new(17);
        for _ in 0..2000 {
            let l_v = rng.uniform_in(-5.0, 2.0);
            let consts = crate::model::ModelConstants::new(
                l_v,
                rng.uniform_in(0.0, 4.0),
                rng.uniform_in(0.0, 4.0),
                rng.uniform_in(0.0, 4.0),
                rng.uniform_in(0.0, 4.0),
                2,
                0.0,
            );
            let max_h = crate::implicit::max_step(l_v).min(100.0);
            let h = rng.uniform_in(1e-6, max_h.max(1e-5));
            if crate::implicit::validate_stepsize(l_v, h).is_err() {
                continue;
            }
            let rate = contraction_rate(&consts, h).unwrap();
            assert!(
                1.0 + rate.beta * h > 0.0,
                "l_v={l_v} h={h}: factor {}",
                1.0 + rate.beta * h
            );
        }
    }

    fn tiny_trajectory(states: Vec<f64>, _label: &str) -> Trajectory<f64> {
        let spec = make_builtin(
            BuiltinModel::OrnsteinUhlenbeckMV,
            &Params::new().set("rho", 0.0).set("lambda", 0.0).set("nu", 0.0),
        )
        .unwrap();
        let n = states.len();
        let noise = NoiseTable::new(1, n, 1, 1.0, 1).unwrap();
        let engine = Engine::new(1).unwrap();
        let scheme = SchemeConfig::new(SchemeKind::ExplicitEuler, 1.0, 1);
        let cloud = crate::engine::ParticleCloud::new(0.0, 1, states).unwrap();
        engine
            .run_from_cloud(&spec, &scheme, cloud, &noise, &SnapshotPolicy::TerminalOnly)
            .unwrap()
    }

    #[test]
    fn error_examples_by_hand() {
        // nu = 0 keeps the trajectories constant, so terminal = initial.
        let reference = tiny_trajectory(vec![1.0, 2.0], "ref");
        let same = tiny_trajectory(vec![1.0, 2.0], "same");
        let offset = tiny_trajectory(vec![0.9, 1.9], "offset");
        let split = tiny_trajectory(vec![0.0, 3.0], "split");

        let zero = strong_weak_errors(&same, &reference, 0).unwrap();
        assert_eq!((zero.eps1, zero.eps2), (0.0, 0.0));

        let c = strong_weak_errors(&offset, &reference, 0).unwrap();
        assert!((c.eps1 - 0.1).abs() < 1e-12 && (c.eps2 - 0.1).abs() < 1e-12);

        // differences {+1, -1}: signed average 0, RMS 1.
        let s = strong_weak_errors(&split, &reference, 0).unwrap();
        assert_eq!(s.eps1, 0.0);
        assert_eq!(s.eps2, 1.0);

        assert!(strong_weak_errors(&tiny_trajectory(vec![1.0], "n1"), &reference, 0).is_err());
    }

    #[test]
    fn strong_error_invariant_under_paired_relabeling() {
        let reference = tiny_trajectory(vec![1.0, 2.0, 3.0, 4.0], "ref");
        let approx = tiny_trajectory(vec![1.5, 1.5, 3.25, 3.75], "x");
        let ref_perm = tiny_trajectory(vec![3.0, 1.0, 4.0, 2.0], "refp");
        let approx_perm = tiny_trajectory(vec![3.25, 1.5, 3.75, 1.5], "xp");
        let a = strong_weak_errors(&approx, &reference, 0).unwrap();
        let b = strong_weak_errors(&approx_perm, &ref_perm, 0).unwrap();
        assert_eq!(a.eps2.to_bits(), b.eps2.to_bits());
        assert_eq!(a.eps1.to_bits(), b.eps1.to_bits());
    }

    #[test]
    fn rate_fit_recovers_constructed_slopes() {
        let h: Vec<f64> = vec![1e-3, 2e-3, 5e-3, 1e-2, 2e-2];
        let half: Vec<f64> = h.iter().map(|h| 3.0 * h.sqrt()).collect();
        let fit = fit_rate(&h, &half).unwrap();
        assert!((fit.slope - 0.5).abs() < 1e-12);
        assert!(fit.max_residual < 1e-12);
        let linear: Vec<f64> = h.iter().map(|h| 0.7 * h).collect();
        let fit = fit_rate(&h, &linear).unwrap();
        assert!((fit.slope - 1.0).abs() < 1e-12);
        assert!(fit_rate(&h[..2], &half[..2]).is_err());
        assert!(fit_rate(&h, &[1.0, 2.0, 0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn ou_moment_oracle() {
        let (m0, s0) = ou_moments::<f64>(-1.0, 0.5, 0.5, 1.0, 1.0, 0.0);
        assert_eq!((m0, s0), (1.0, 1.0));
        let (mean, _) = ou_moments(-1.0, 0.5, 0.5, 1.0, 1.0, 1.0);
        assert!((mean - (-0.5f64).exp()).abs() < 1e-15);
        // Deterministic dynamics: second moment is the squared mean.
        let (m, s) = ou_moments::<f64>(-0.7, 0.2, 0.0, 2.0, 4.0, 1.3);
        assert!((s - m * m).abs() < 1e-12);
        // rho = 0 limit.
        let (_, s) = ou_moments::<f64>(0.0, 0.0, 1.0, 0.0, 0.0, 2.5);
        assert!((s - 2.5).abs() < 1e-15);
    }

    #[test]
    fn wasserstein_examples_and_two_point_brute_force() {
        assert_eq!(wasserstein2_1d(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap(), 0.0);
        // Two two-point measures: the only couplings are identity and swap.
        let (a, b) = ([0.0, 1.0], [1.0, 2.0]);
        let sorted_cost = wasserstein2_1d(&a, &b).unwrap();
        let identity = ((1.0f64 + 1.0) / 2.0).sqrt();
        let swap = ((4.0f64 + 0.0) / 2.0).sqrt();
        assert_eq!(sorted_cost, identity.min(swap));
        assert_eq!(sorted_cost, 1.0);
        // Translation of a point mass.
        for c in [-3.0f64, 0.25, 7.0] {
            let d = wasserstein2_1d(&[0.0, 0.0], &[c, c]).unwrap();
            assert!((d - c.abs()).abs() < 1e-15);
        }
        assert!(wasserstein2_1d(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn wasserstein_triangle_inequality_on_random_triples() {
        let mut rng = UtilityRng::new(23);
        for _ in 0..300 {
            let a: Vec<f64> = (0..16).map(|_| rng.uniform_in(-5.0, 5.0)).collect();
            let b: Vec<f64> = (0..16).map(|_| rng.uniform_in(-5.0, 5.0)).collect();
            let c: Vec<f64> = (0..16).map(|_| rng.uniform_in(-5.0, 5.0)).collect();
            let ab = wasserstein2_1d(&a, &b).unwrap();
            let bc = wasserstein2_1d(&b, &c).unwrap();
            let ac = wasserstein2_1d(&a, &c).unwrap();
            assert!(ac <= ab + bc + 1e-9, "{ac} vs {ab} + {bc}");
        }
    }

    #[test]
    fn contractivity_of_identical_initial_laws_is_zero() {
        let spec = make_builtin(
            BuiltinModel::GinzburgLandauStability,
            &Params::new().set("gamma", 0.0),
        )
        .unwrap();
        let sampler = InitialSampler::new(InitialLaw::Point(vec![1.0]), 3, 0).unwrap();
        let noise = NoiseTable::new(3, 16, 1, 0.05, 20).unwrap();
        let engine = Engine::new(1).unwrap();
        let scheme = SchemeConfig::new(SchemeKind::SplitStep, 0.05, 20);
        let (x, z) = engine
            .run_two_state(&spec, &scheme, 16, &sampler, &sampler, &noise, &SnapshotPolicy::EveryK(1))
            .unwrap();
        let report = contractivity_series(&x, &z, &spec.constants, 0.05).unwrap();
        assert!(report.gap.iter().all(|d| *d == 0.0));
    }

    #[test]
    fn shared_additive_noise_keeps_the_gap_constant() {
        let spec = make_builtin(
            BuiltinModel::OrnsteinUhlenbeckMV,
            &Params::new().set("rho", 0.0).set("lambda", 0.0).set("nu", 1.0),
        )
        .unwrap();
        let x0 = InitialSampler::new(InitialLaw::Point(vec![0.0f64]), 5, 0).unwrap();
        let z0 = InitialSampler::new(InitialLaw::Point(vec![4.0]), 5, 1).unwrap();
        let noise = NoiseTable::new(5, 8, 1, 0.125, 16).unwrap();
        let engine = Engine::new(1).unwrap();
        let scheme = SchemeConfig::new(SchemeKind::SplitStep, 0.125, 16);
        let (x, z) = engine
            .run_two_state(&spec, &scheme, 8, &x0, &z0, &noise, &SnapshotPolicy::EveryK(1))
            .unwrap();
        let report = contractivity_series(&x, &z, &spec.constants, 0.125).unwrap();
        for d in &report.gap {
            assert!((*d - 16.0).abs() < 1e-10, "gap {d}");
        }
    }
}

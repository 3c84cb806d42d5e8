//! Built-in benchmark models.
//!
//! Each constructor wires the coefficient triple `(v, b, sigma)`, the
//! structural constants and the implicit-stage solver hint for one model.
//! Parameters are supplied explicitly through [`Params`]; there are no silent
//! defaults for physical constants (the one documented exception is the
//! flocking model's deterministic position origin `x0`).

use std::collections::BTreeMap;
use std::str::FromStr;
use std::sync::Arc;

use crate::model::{
    CubicCoeff, DriftV, MeasureCoeff, MeasureStats, ModelConstants, ModelSpec, SolverHint,
    StatDescriptor, StatRequirement,
};
use crate::noise::UtilityRng;
use crate::{Error, Real, Result};

/// Key-value parameter map for model construction.
#[derive(Debug, Clone, Default)]
pub struct Params<T: Real> {
    map: BTreeMap<String, T>,
}

impl<T: Real> Params<T> {
    pub fn new() -> Self {
        Params { map: BTreeMap::new() }
    }

    pub fn set(mut self, key: &str, value: T) -> Self {
        self.map.insert(key.to_string(), value);
        self
    }

    pub fn insert(&mut self, key: &str, value: T) {
        self.map.insert(key.to_string(), value);
    }

    pub fn get(&self, key: &str) -> Option<T> {
        self.map.get(key).copied()
    }

    fn require(&self, key: &str) -> Result<T> {
        self.map.get(key).copied().ok_or_else(|| {
            Error::Config(format!("missing required model parameter \"{key}\""))
        })
    }

    fn optional(&self, key: &str, default: T) -> T {
        self.map.get(key).copied().unwrap_or(default)
    }

    fn check_known(&self, known: &[&str]) -> Result<()> {
        for key in self.map.keys() {
            if !known.contains(&key.as_str()) {
                return Err(Error::Config(format!(
                    "unknown model parameter \"{key}\" (known: {})",
                    known.join(", ")
                )));
            }
        }
        Ok(())
    }
}

/// The built-in model family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinModel {
    GinzburgLandau,
    FitzHughNagumo,
    PolynomialDrift,
    OrnsteinUhlenbeckMV,
    GinzburgLandauStability,
    CuckerSmale,
}

impl BuiltinModel {
    pub const ALL: [BuiltinModel; 6] = [
        BuiltinModel::GinzburgLandau,
        BuiltinModel::FitzHughNagumo,
        BuiltinModel::PolynomialDrift,
        BuiltinModel::OrnsteinUhlenbeckMV,
        BuiltinModel::GinzburgLandauStability,
        BuiltinModel::CuckerSmale,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            BuiltinModel::GinzburgLandau => "ginzburg_landau",
            BuiltinModel::FitzHughNagumo => "fitzhugh_nagumo",
            BuiltinModel::PolynomialDrift => "polynomial_drift",
            BuiltinModel::OrnsteinUhlenbeckMV => "ornstein_uhlenbeck",
            BuiltinModel::GinzburgLandauStability => "ginzburg_landau_stability",
            BuiltinModel::CuckerSmale => "cucker_smale",
        }
    }
}

impl FromStr for BuiltinModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ginzburg_landau" => Ok(BuiltinModel::GinzburgLandau),
            "fitzhugh_nagumo" => Ok(BuiltinModel::FitzHughNagumo),
            "polynomial_drift" => Ok(BuiltinModel::PolynomialDrift),
            "ornstein_uhlenbeck" => Ok(BuiltinModel::OrnsteinUhlenbeckMV),
            "ginzburg_landau_stability" => Ok(BuiltinModel::GinzburgLandauStability),
            "cucker_smale" => Ok(BuiltinModel::CuckerSmale),
            other => Err(Error::Config(format!(
                "unknown model \"{other}\" (known: ginzburg_landau, fitzhugh_nagumo, \
                 polynomial_drift, ornstein_uhlenbeck, ginzburg_landau_stability, cucker_smale)"
            ))),
        }
    }
}

/// Build one of the built-in models from its parameter map.
pub fn make_builtin<T: Real>(model: BuiltinModel, params: &Params<T>) -> Result<ModelSpec<T>> {
    let spec = match model {
        BuiltinModel::GinzburgLandau => ginzburg_landau(params)?,
        BuiltinModel::FitzHughNagumo => fitzhugh_nagumo(params)?,
        BuiltinModel::PolynomialDrift => polynomial_drift(params)?,
        BuiltinModel::OrnsteinUhlenbeckMV => ornstein_uhlenbeck(params)?,
        BuiltinModel::GinzburgLandauStability => ginzburg_landau_stability(params)?,
        BuiltinModel::CuckerSmale => cucker_smale(params)?,
    };
    spec.validate()?;
    Ok(spec)
}

/// Squared Lipschitz split for a coefficient `space_coeff * x + measure_coeff * mean`.
/// When both terms are present the cross terms cost a factor of two.
fn lipschitz_split<T: Real>(space_coeff: T, measure_coeff: T) -> (T, T) {
    let two = T::of(2.0);
    if space_coeff == T::zero() {
        (T::zero(), measure_coeff * measure_coeff)
    } else if measure_coeff == T::zero() {
        (space_coeff * space_coeff, T::zero())
    } else {
        (
            two * space_coeff * space_coeff,
            two * measure_coeff * measure_coeff,
        )
    }
}

/// Mean-field Ginzburg-Landau: cubic double-well drift with a linear
/// mean-reversion to the cloud average and multiplicative noise.
///
///   dX = ((sigma'^2 / 2) X - X^3 + c E[X]) dt + sigma' X dW
///
/// Split: `v(t,x) = -x^3`, `b(t,x,mu) = (sigma'^2/2) x + c mean`,
/// `sigma = sigma' x`. Parameters: `sigma_prime >= 0`, `c`.
fn ginzburg_landau<T: Real>(params: &Params<T>) -> Result<ModelSpec<T>> {
    params.check_known(&["sigma_prime", "c"])?;
    let sigma_prime = params.require("sigma_prime")?;
    let c = params.require("c")?;
    if sigma_prime < T::zero() {
        return Err(Error::Config("ginzburg_landau: sigma_prime must be >= 0".into()));
    }
    let half_sq = sigma_prime * sigma_prime * T::of(0.5);
    let (l_b, l_bhat) = lipschitz_split(half_sq, c.abs());
    Ok(ModelSpec {
        dim: 1,
        noise_dim: 1,
        v: DriftV::Plain(Arc::new(|_t, x: &[T], out: &mut [T]| {
            out[0] = -(x[0] * x[0] * x[0]);
        })),
        b: Arc::new(move |_t, x: &[T], stats: &MeasureStats<T>, out: &mut [T]| {
            out[0] = half_sq * x[0] + c * stats.mean[0];
        }),
        sigma: Arc::new(move |_t, x: &[T], _stats: &MeasureStats<T>, out: &mut [T]| {
            out[0] = sigma_prime * x[0];
        }),
        constants: ModelConstants::new(
            T::zero(),
            l_b,
            l_bhat,
            sigma_prime * sigma_prime,
            T::zero(),
            2,
            T::zero(),
        ),
        solver_hint: SolverHint::ComponentwiseCubic {
            coeffs: vec![CubicCoeff { cube: -T::one(), lin: T::zero() }],
        },
        stats: StatDescriptor::new(&[StatRequirement::Mean]),
        name: "ginzburg_landau".into(),
    })
}

/// Ginzburg-Landau variant used for the contractivity experiments:
///
///   dX = (-(5/2) X - (1/4) X^3 + E[X]) dt + X dW
///
/// with an optional shift `gamma` moving a linear term between `v` and `b`:
/// `v = (gamma - 5/2) x - x^3/4`, `b = mean - gamma x`, `sigma = x`.
fn ginzburg_landau_stability<T: Real>(params: &Params<T>) -> Result<ModelSpec<T>> {
    params.check_known(&["gamma"])?;
    let gamma = params.require("gamma")?;
    let lin = gamma - T::of(2.5);
    let (l_b, l_bhat) = lipschitz_split(gamma.abs(), T::one());
    Ok(ModelSpec {
        dim: 1,
        noise_dim: 1,
        v: DriftV::Plain(Arc::new(move |_t, x: &[T], out: &mut [T]| {
            out[0] = lin * x[0] - T::of(0.25) * x[0] * x[0] * x[0];
        })),
        b: Arc::new(move |_t, x: &[T], stats: &MeasureStats<T>, out: &mut [T]| {
            out[0] = stats.mean[0] - gamma * x[0];
        }),
        sigma: Arc::new(|_t, x: &[T], _stats: &MeasureStats<T>, out: &mut [T]| {
            out[0] = x[0];
        }),
        constants: ModelConstants::new(lin, l_b, l_bhat, T::one(), T::zero(), 2, T::zero()),
        solver_hint: SolverHint::ComponentwiseCubic {
            coeffs: vec![CubicCoeff { cube: -T::of(0.25), lin }],
        },
        stats: StatDescriptor::new(&[StatRequirement::Mean]),
        name: "ginzburg_landau_stability".into(),
    })
}

/// Mean-field Ornstein-Uhlenbeck:
///
///   dX = (rho X + lambda E[X]) dt + nu dW
///
/// Closed-form moments make this the oracle model for scheme validation.
fn ornstein_uhlenbeck<T: Real>(params: &Params<T>) -> Result<ModelSpec<T>> {
    params.check_known(&["rho", "lambda", "nu"])?;
    let rho = params.require("rho")?;
    let lambda = params.require("lambda")?;
    let nu = params.require("nu")?;
    Ok(ModelSpec {
        dim: 1,
        noise_dim: 1,
        v: DriftV::Plain(Arc::new(move |_t, x: &[T], out: &mut [T]| {
            out[0] = rho * x[0];
        })),
        b: Arc::new(move |_t, _x: &[T], stats: &MeasureStats<T>, out: &mut [T]| {
            out[0] = lambda * stats.mean[0];
        }),
        sigma: Arc::new(move |_t, _x: &[T], _stats: &MeasureStats<T>, out: &mut [T]| {
            out[0] = nu;
        }),
        constants: ModelConstants::new(
            rho,
            T::zero(),
            lambda * lambda,
            T::zero(),
            T::zero(),
            1,
            T::zero(),
        ),
        solver_hint: SolverHint::ComponentwiseCubic {
            coeffs: vec![CubicCoeff { cube: T::zero(), lin: rho }],
        },
        stats: StatDescriptor::new(&[StatRequirement::Mean]),
        name: "ornstein_uhlenbeck".into(),
    })
}

/// Polynomial drift with superlinear measure dependency:
///
///   dX = (gamma X + E[X] - X E[X^2]) dt + X dW
///
/// The second-moment coupling sits in `v(t, x, mu) = gamma x - x m2`, so the
/// implicit stage is only well-posed with the measure frozen at the step
/// start; the model therefore requires the frozen-measure split-step variant
/// (explicit baselines evaluate it with the current cloud's statistics).
/// With frozen `m2` the stage is linear: `y = d / (1 - h gamma + h m2)`.
fn polynomial_drift<T: Real>(params: &Params<T>) -> Result<ModelSpec<T>> {
    params.check_known(&["gamma"])?;
    let gamma = params.require("gamma")?;
    Ok(ModelSpec {
        dim: 1,
        noise_dim: 1,
        v: DriftV::FrozenMeasure(Arc::new(
            move |_t, x: &[T], stats: &MeasureStats<T>, out: &mut [T]| {
                out[0] = gamma * x[0] - x[0] * stats.second_moment[0];
            },
        )),
        b: Arc::new(|_t, _x: &[T], stats: &MeasureStats<T>, out: &mut [T]| {
            out[0] = stats.mean[0];
        }),
        sigma: Arc::new(|_t, x: &[T], _stats: &MeasureStats<T>, out: &mut [T]| {
            out[0] = x[0];
        }),
        // m2 >= 0, so gamma dominates the one-sided constant of the frozen drift.
        constants: ModelConstants::new(
            gamma,
            T::zero(),
            T::one(),
            T::one(),
            T::zero(),
            1,
            T::zero(),
        ),
        solver_hint: SolverHint::Linear,
        stats: StatDescriptor::new(&[StatRequirement::Mean, StatRequirement::SecondMoment]),
        name: "polynomial_drift".into(),
    })
}

/// Two-dimensional Cucker-Smale flocking model with state `(V, X)`:
///
///   dV = (-V^3 + lambda (E[V] - V)) dt + sigma' (E[V] - V) dW
///   dX = V dt
///
/// The position coordinate carries no noise (degenerate diffusion row).
/// Parameters: `lambda`, `sigma_prime`; `x0` is accepted by the initial
/// sampler configuration, not here.
fn cucker_smale<T: Real>(params: &Params<T>) -> Result<ModelSpec<T>> {
    params.check_known(&["lambda", "sigma_prime"])?;
    let lambda = params.require("lambda")?;
    let sigma_prime = params.require("sigma_prime")?;
    let two = T::of(2.0);
    Ok(ModelSpec {
        dim: 2,
        noise_dim: 1,
        v: DriftV::Plain(Arc::new(|_t, x: &[T], out: &mut [T]| {
            out[0] = -(x[0] * x[0] * x[0]);
            out[1] = T::zero();
        })),
        b: Arc::new(move |_t, x: &[T], stats: &MeasureStats<T>, out: &mut [T]| {
            out[0] = lambda * (stats.mean[0] - x[0]);
            out[1] = x[0];
        }),
        sigma: Arc::new(move |_t, x: &[T], stats: &MeasureStats<T>, out: &mut [T]| {
            out[0] = sigma_prime * (stats.mean[0] - x[0]);
            out[1] = T::zero();
        }),
        constants: ModelConstants::new(
            T::zero(),
            two * lambda * lambda + T::one(),
            two * lambda * lambda,
            two * sigma_prime * sigma_prime,
            two * sigma_prime * sigma_prime,
            2,
            T::zero(),
        ),
        solver_hint: SolverHint::ComponentwiseCubic {
            coeffs: vec![
                CubicCoeff { cube: -T::one(), lin: T::zero() },
                CubicCoeff { cube: T::zero(), lin: T::zero() },
            ],
        },
        stats: StatDescriptor::new(&[StatRequirement::Mean]),
        name: "cucker_smale".into(),
    })
}

const FHN_PARAMS: [&str; 16] = [
    "i", "j", "v_rev", "v_t", "t_max", "lambda", "a", "b", "c", "a_r", "a_d", "sigma_ext",
    "sigma_j", "gamma_y", "lambda_y", "state_bound",
];

/// Mean-field FitzHugh-Nagumo neuron network, three-dimensional state
/// `(V, w, y)` with a cubic membrane nonlinearity in `v` and a synaptic
/// coupling through the mean of the gating variable `y`.
///
/// All physical constants are mandatory configuration inputs.  `state_bound`
/// (optional, default 10) only scales the sampled diagnostic Lipschitz
/// estimates; it does not enter the dynamics.
fn fitzhugh_nagumo<T: Real>(params: &Params<T>) -> Result<ModelSpec<T>> {
    params.check_known(&FHN_PARAMS)?;
    let i_ext = params.require("i")?;
    let j_coupling = params.require("j")?;
    let v_rev = params.require("v_rev")?;
    let v_t = params.require("v_t")?;
    let t_max = params.require("t_max")?;
    let lambda = params.require("lambda")?;
    let a = params.require("a")?;
    let b_par = params.require("b")?;
    let c_par = params.require("c")?;
    let a_r = params.require("a_r")?;
    let a_d = params.require("a_d")?;
    let sigma_ext = params.require("sigma_ext")?;
    let sigma_j = params.require("sigma_j")?;
    let gamma_y = params.require("gamma_y")?;
    let lambda_y = params.require("lambda_y")?;
    let state_bound = params.optional("state_bound", T::of(10.0));
    for (name, value) in [("t_max", t_max), ("a_r", a_r), ("a_d", a_d)] {
        if value < T::zero() {
            return Err(Error::Config(format!("fitzhugh_nagumo: {name} must be >= 0")));
        }
    }
    if state_bound <= T::zero() {
        return Err(Error::Config("fitzhugh_nagumo: state_bound must be > 0".into()));
    }

    // Gating-variable opening rate a_r T_max (1 - y) / (1 + exp(-lambda (V - V_T))).
    let open_rate = move |v: T, y: T| -> T {
        a_r * t_max * (T::one() - y) / (T::one() + (-lambda * (v - v_t)).exp())
    };
    // Noise amplitude of the gating channel: a mollified square-root rate that
    // vanishes smoothly at y = 0 and y = 1.
    let gate_noise = move |v: T, y: T| -> T {
        if y <= T::zero() || y >= T::one() {
            return T::zero();
        }
        let rate = open_rate(v, y) + a_d * y;
        let bump = T::one() - (T::of(2.0) * y - T::one()).powi(2);
        gamma_y * (-lambda_y / bump).exp() * rate.max(T::zero()).sqrt()
    };

    let b_fn: MeasureCoeff<T> = Arc::new(move |_t, x: &[T], stats: &MeasureStats<T>, out: &mut [T]| {
        let m_y = stats.mean[2];
        out[0] = x[0] - x[1] + i_ext - j_coupling * (x[0] - v_rev) * m_y;
        out[1] = c_par * (x[0] + a - b_par * x[1]);
        out[2] = open_rate(x[0], x[2]) - a_d * x[2];
    });
    let sigma_fn: MeasureCoeff<T> =
        Arc::new(move |_t, x: &[T], stats: &MeasureStats<T>, out: &mut [T]| {
            let m_y = stats.mean[2];
            out.iter_mut().for_each(|o| *o = T::zero());
            out[0] = sigma_ext;
            out[2] = -sigma_j * (x[0] - v_rev) * m_y;
            out[7] = gate_noise(x[0], x[2]);
        });

    // Space-Lipschitz diagnostics are sampled over the physical region
    // (|V|, |w| <= state_bound, y in [0, 1]); the measure constants follow
    // from the bilinear coupling term on the same region. Coarse, and used
    // only by the stability diagnostics, never by the integrators.
    let lo = [-state_bound, -state_bound, T::zero()];
    let hi = [state_bound, state_bound, T::one()];
    let l_b = sampled_space_lipschitz_sq(&b_fn, 3, 3, &lo, &hi, 4096, 0xF48);
    let l_sigma = sampled_space_lipschitz_sq(&sigma_fn, 3, 9, &lo, &hi, 4096, 0xF49);
    let reach = state_bound + v_rev.abs();
    let l_bhat = (j_coupling * reach).powi(2);
    let l_sigmahat = (sigma_j * reach).powi(2);

    Ok(ModelSpec {
        dim: 3,
        noise_dim: 3,
        v: DriftV::Plain(Arc::new(|_t, x: &[T], out: &mut [T]| {
            out[0] = -(x[0] * x[0] * x[0]) / T::of(3.0);
            out[1] = T::zero();
            out[2] = T::zero();
        })),
        b: b_fn,
        sigma: sigma_fn,
        constants: ModelConstants::new(T::zero(), l_b, l_bhat, l_sigma, l_sigmahat, 2, T::zero()),
        solver_hint: SolverHint::ComponentwiseCubic {
            coeffs: vec![
                CubicCoeff { cube: -T::one() / T::of(3.0), lin: T::zero() },
                CubicCoeff { cube: T::zero(), lin: T::zero() },
                CubicCoeff { cube: T::zero(), lin: T::zero() },
            ],
        },
        stats: StatDescriptor::new(&[StatRequirement::Mean]),
        name: "fitzhugh_nagumo".into(),
    })
}

/// Largest sampled difference quotient `|f(t,x) - f(t,x')|^2 / |x - x'|^2`
/// with the measure statistics held fixed per sample.
fn sampled_space_lipschitz_sq<T: Real>(
    f: &MeasureCoeff<T>,
    dim: usize,
    out_len: usize,
    lo: &[T],
    hi: &[T],
    samples: usize,
    seed: u64,
) -> T {
    let mut rng = UtilityRng::new(seed);
    let mut x = vec![T::zero(); dim];
    let mut y = vec![T::zero(); dim];
    let mut fx = vec![T::zero(); out_len];
    let mut fy = vec![T::zero(); out_len];
    let mut worst = T::zero();
    for _ in 0..samples {
        let t = T::of(rng.uniform());
        for j in 0..dim {
            let (l, h) = (lo[j].to_f64().unwrap(), hi[j].to_f64().unwrap());
            x[j] = T::of(rng.uniform_in(l, h));
            y[j] = T::of(rng.uniform_in(l, h));
        }
        let mut mean = vec![T::zero(); dim];
        for (j, m) in mean.iter_mut().enumerate() {
            let (l, h) = (lo[j].to_f64().unwrap(), hi[j].to_f64().unwrap());
            *m = T::of(rng.uniform_in(l, h));
        }
        let stats = MeasureStats {
            second_moment: mean.iter().map(|m| *m * *m).collect(),
            mean,
            cloud: None,
        };
        f(t, &x, &stats, &mut fx);
        f(t, &y, &stats, &mut fy);
        let mut num = T::zero();
        let mut den = T::zero();
        for j in 0..dim {
            let d = x[j] - y[j];
            den += d * d;
        }
        for k in 0..out_len {
            let d = fx[k] - fy[k];
            num += d * d;
        }
        if den > T::zero() && num / den > worst {
            worst = num / den;
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{empirical_stats, one_sided_lipschitz_ratio, SamplingBox};
    use crate::ParticleCloud;

    fn gl() -> ModelSpec<f64> {
        make_builtin(
            BuiltinModel::GinzburgLandau,
            &Params::new().set("sigma_prime", 1.5).set("c", 0.5),
        )
        .unwrap()
    }

    fn fhn_sample_params() -> Params<f64> {
        Params::new()
            .set("i", 0.5)
            .set("j", 1.0)
            .set("v_rev", 1.0)
            .set("v_t", 2.0)
            .set("t_max", 1.0)
            .set("lambda", 0.2)
            .set("a", 0.7)
            .set("b", 0.8)
            .set("c", 0.08)
            .set("a_r", 1.0)
            .set("a_d", 1.0)
            .set("sigma_ext", 0.5)
            .set("sigma_j", 0.2)
            .set("gamma_y", 0.1)
            .set("lambda_y", 0.5)
    }

    pub(crate) fn all_builtins() -> Vec<ModelSpec<f64>> {
        vec![
            gl(),
            make_builtin(BuiltinModel::FitzHughNagumo, &fhn_sample_params()).unwrap(),
            make_builtin(BuiltinModel::PolynomialDrift, &Params::new().set("gamma", -1.0)).unwrap(),
            make_builtin(
                BuiltinModel::OrnsteinUhlenbeckMV,
                &Params::new().set("rho", -1.0).set("lambda", 0.5).set("nu", 0.5),
            )
            .unwrap(),
            make_builtin(BuiltinModel::GinzburgLandauStability, &Params::new().set("gamma", 0.0))
                .unwrap(),
            make_builtin(
                BuiltinModel::CuckerSmale,
                &Params::new().set("lambda", 2.0).set("sigma_prime", 4.0),
            )
            .unwrap(),
        ]
    }

    #[test]
    fn ginzburg_landau_coefficients_match_definition() {
        let spec = gl();
        let stats = MeasureStats::at_point(&[2.0]);
        let mut out = [0.0];
        spec.v.eval(0.0, &[3.0], &stats, &mut out);
        assert_eq!(out[0], -27.0);
        (spec.b)(0.0, &[3.0], &stats, &mut out);
        assert_eq!(out[0], 1.125 * 3.0 + 0.5 * 2.0);
        (spec.sigma)(0.0, &[3.0], &stats, &mut out);
        assert_eq!(out[0], 4.5);
        assert_eq!(spec.constants.l_v, 0.0);
        assert_eq!(spec.constants.c_t, 0.0);
        // v(t, 0) = 0 exactly.
        spec.v.eval(0.3, &[0.0], &stats, &mut out);
        assert_eq!(out[0], 0.0);
    }

    #[test]
    fn stability_variant_constants_at_gamma_zero() {
        let spec = make_builtin(
            BuiltinModel::GinzburgLandauStability,
            &Params::new().set("gamma", 0.0),
        )
        .unwrap();
        let c = spec.constants;
        assert_eq!(
            (c.l_v, c.l_b, c.l_bhat, c.l_sigma, c.l_sigmahat),
            (-2.5, 0.0, 1.0, 1.0, 0.0)
        );
        assert_eq!(c.lhat_v, -2.0);
    }

    #[test]
    fn ou_constants_and_pure_brownian_degeneration() {
        let spec = make_builtin(
            BuiltinModel::OrnsteinUhlenbeckMV,
            &Params::new().set("rho", 0.0).set("lambda", 0.0).set("nu", 1.0),
        )
        .unwrap();
        let stats = MeasureStats::at_point(&[4.0]);
        let mut out = [0.0];
        spec.v.eval(0.0, &[7.0], &stats, &mut out);
        assert_eq!(out[0], 0.0);
        (spec.b)(0.0, &[7.0], &stats, &mut out);
        assert_eq!(out[0], 0.0);
        (spec.sigma)(0.0, &[7.0], &stats, &mut out);
        assert_eq!(out[0], 1.0);
    }

    #[test]
    fn ou_measure_lipschitz_is_lambda_squared() {
        let spec = make_builtin(
            BuiltinModel::OrnsteinUhlenbeckMV,
            &Params::new().set("rho", -1.0).set("lambda", 0.5).set("nu", 0.5),
        )
        .unwrap();
        assert_eq!(spec.constants.l_v, -1.0);
        assert_eq!(spec.constants.l_bhat, 0.25);
    }

    #[test]
    fn cucker_smale_position_row_carries_no_noise() {
        let spec = make_builtin(
            BuiltinModel::CuckerSmale,
            &Params::new().set("lambda", 2.0).set("sigma_prime", 4.0),
        )
        .unwrap();
        let mut rng = UtilityRng::new(9);
        let mut out = [0.0; 2];
        for _ in 0..100 {
            let x = [rng.uniform_in(-20.0, 20.0), rng.uniform_in(-20.0, 20.0)];
            let stats = MeasureStats::at_point(&[rng.uniform_in(-5.0, 5.0), 0.0]);
            (spec.sigma)(rng.uniform(), &x, &stats, &mut out);
            assert_eq!(out[1], 0.0);
        }
    }

    #[test]
    fn missing_and_unknown_params_are_errors() {
        assert!(make_builtin::<f64>(BuiltinModel::GinzburgLandau, &Params::new()).is_err());
        assert!(make_builtin::<f64>(
            BuiltinModel::GinzburgLandau,
            &Params::new().set("sigma_prime", 1.0).set("c", 0.0).set("typo", 1.0)
        )
        .is_err());
        assert!(make_builtin::<f64>(
            BuiltinModel::GinzburgLandau,
            &Params::new().set("sigma_prime", -1.0).set("c", 0.0)
        )
        .is_err());
        // FitzHugh-Nagumo constants have no defaults at all.
        assert!(make_builtin::<f64>(BuiltinModel::FitzHughNagumo, &Params::new().set("i", 0.5))
            .is_err());
    }

    #[test]
    fn one_sided_ratio_never_exceeds_stored_constant() {
        // 10^5 samples per model; the sampled ratio must stay within 1e-9 of
        // the stored one-sided constant.
        for spec in all_builtins() {
            let ratio =
                one_sided_lipschitz_ratio(&spec, 100_000, 42, SamplingBox::default()).unwrap();
            assert!(
                ratio <= spec.constants.l_v + 1e-9,
                "{}: sampled ratio {ratio} exceeds stored L_v {}",
                spec.name,
                spec.constants.l_v
            );
        }
    }

    #[test]
    fn ginzburg_landau_ratio_is_nonpositive() {
        let ratio =
            one_sided_lipschitz_ratio(&gl(), 100_000, 7, SamplingBox::default()).unwrap();
        assert!(ratio <= 1e-12, "ratio {ratio}");
    }

    #[test]
    fn stability_variant_ratio_attains_its_constant() {
        let spec = make_builtin(
            BuiltinModel::GinzburgLandauStability,
            &Params::new().set("gamma", 0.0),
        )
        .unwrap();
        let ratio =
            one_sided_lipschitz_ratio(&spec, 100_000, 11, SamplingBox::default()).unwrap();
        assert!(ratio <= -2.5 + 1e-9, "ratio {ratio}");
        // The supremum is attained in the limit of coincident points, so the
        // sampled value sits just below -5/2.
        assert!(ratio > -2.6, "ratio {ratio}");
    }

    #[test]
    fn stats_identity_for_all_builtins_under_permutation() {
        for spec in all_builtins() {
            let d = spec.dim;
            let mut rng = UtilityRng::new(5);
            let states: Vec<f64> = (0..8 * d).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
            let cloud = ParticleCloud::new(0.0, d, states.clone()).unwrap();
            // Rotate the particle order.
            let mut rotated = states[3 * d..].to_vec();
            rotated.extend_from_slice(&states[..3 * d]);
            let cloud_rot = ParticleCloud::new(0.0, d, rotated).unwrap();
            let s1 = empirical_stats(&cloud, &spec.stats).unwrap();
            let s2 = empirical_stats(&cloud_rot, &spec.stats).unwrap();
            for j in 0..d {
                assert_eq!(s1.mean[j].to_bits(), s2.mean[j].to_bits(), "{}", spec.name);
                assert_eq!(
                    s1.second_moment[j].to_bits(),
                    s2.second_moment[j].to_bits(),
                    "{}",
                    spec.name
                );
            }
        }
    }

    #[test]
    fn fhn_gate_noise_vanishes_outside_unit_interval() {
        let spec = make_builtin(BuiltinModel::FitzHughNagumo, &fhn_sample_params()).unwrap();
        let stats = MeasureStats::at_point(&[0.0, 0.5, 0.3]);
        let mut out = [0.0; 9];
        for y in [-0.5, 0.0, 1.0, 1.5] {
            (spec.sigma)(0.0, &[0.2, 0.1, y], &stats, &mut out);
            assert_eq!(out[7], 0.0, "gate noise at y={y}");
        }
        (spec.sigma)(0.0, &[0.2, 0.1, 0.5], &stats, &mut out);
        assert!(out[7] > 0.0);
    }
}

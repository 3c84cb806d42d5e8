//! Coefficient interface for McKean-Vlasov models with drift split `v + b`.
//!
//! `v(t, x)` carries the superlinear growth and satisfies a one-sided
//! Lipschitz condition with constant `L_v`; `b(t, x, mu)` and
//! `sigma(t, x, mu)` are Lipschitz in state and measure.  Coefficients never
//! see the raw particle cloud: they receive a [`MeasureStats`] snapshot, so
//! the interaction cost of every built-in model is O(N).  Models that truly
//! need O(N^2) pairwise kernels can request the full cloud through their
//! [`StatDescriptor`].

use std::sync::Arc;

use rayon::prelude::*;

use crate::engine::ParticleCloud;
use crate::noise::UtilityRng;
use crate::reduce;
use crate::{Error, Real, Result};

/// Coefficient taking state only: `f(t, x, out)`.
pub type StateCoeff<T> = Arc<dyn Fn(T, &[T], &mut [T]) + Send + Sync>;
/// Coefficient taking state and empirical-measure statistics.
pub type MeasureCoeff<T> = Arc<dyn Fn(T, &[T], &MeasureStats<T>, &mut [T]) + Send + Sync>;

/// Cached statistics of the empirical measure of a cloud, consumed by
/// coefficient functions in place of the measure itself.
#[derive(Debug, Clone)]
pub struct MeasureStats<T: Real> {
    /// Componentwise mean of the cloud.
    pub mean: Vec<T>,
    /// Componentwise second moment `(1/N) sum x_j^2`.
    pub second_moment: Vec<T>,
    /// Full state snapshot for O(N^2) kernels; only present when the model's
    /// descriptor asks for it.
    pub cloud: Option<Arc<Vec<T>>>,
}

impl<T: Real> MeasureStats<T> {
    /// Stats of the degenerate cloud sitting at one point.
    pub fn at_point(x: &[T]) -> Self {
        MeasureStats {
            mean: x.to_vec(),
            second_moment: x.iter().map(|v| *v * *v).collect(),
            cloud: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Which empirical statistics a model's coefficients consume.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatRequirement {
    Mean,
    SecondMoment,
    /// Escape hatch: the coefficients get a handle to the whole cloud.
    FullCloud,
}

/// The set of statistics a model requires each step.
#[derive(Debug, Clone, Default)]
pub struct StatDescriptor {
    pub requires: Vec<StatRequirement>,
}

impl StatDescriptor {
    pub fn new(requires: &[StatRequirement]) -> Self {
        StatDescriptor { requires: requires.to_vec() }
    }

    pub fn needs_full_cloud(&self) -> bool {
        self.requires.contains(&StatRequirement::FullCloud)
    }
}

/// Structural constants of a model, as used by the step-size rule and the
/// mean-square contractivity diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConstants<T: Real> {
    /// One-sided Lipschitz constant of `v` (may be negative).
    pub l_v: T,
    /// Squared space-Lipschitz constant of `b`.
    pub l_b: T,
    /// Squared measure-Lipschitz constant of `b`.
    pub l_bhat: T,
    /// Squared space-Lipschitz constant of `sigma`.
    pub l_sigma: T,
    /// Squared measure-Lipschitz constant of `sigma`.
    pub l_sigmahat: T,
    /// Polynomial growth degree of `v`.
    pub q: u32,
    /// `l_v + 1/2`, the constant governing the implicit-stage domination bound.
    pub lhat_v: T,
    /// `sup_t |v(t, 0)|^2 / 2`; zero for every built-in model.
    pub c_t: T,
}

impl<T: Real> ModelConstants<T> {
    /// Build from the primitive constants; `lhat_v` is derived exactly.
    pub fn new(l_v: T, l_b: T, l_bhat: T, l_sigma: T, l_sigmahat: T, q: u32, c_t: T) -> Self {
        ModelConstants {
            l_v,
            l_b,
            l_bhat,
            l_sigma,
            l_sigmahat,
            q,
            lhat_v: l_v + T::of(0.5),
            c_t,
        }
    }
}

/// Per-component coefficients of a componentwise-cubic drift
/// `v_j(y) = cube * y^3 + lin * y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubicCoeff<T: Real> {
    pub cube: T,
    pub lin: T,
}

/// How the implicit stage `y = d + h v(t, y)` should be solved.
#[derive(Debug, Clone)]
pub enum SolverHint<T: Real> {
    /// `v` acts componentwise and is cubic-or-lower in each coordinate; the
    /// stage reduces to one monotone scalar cubic per component.
    ComponentwiseCubic { coeffs: Vec<CubicCoeff<T>> },
    /// `v` is componentwise linear in the state (its slope may depend on the
    /// frozen measure); the stage is a direct division.
    Linear,
    /// General one-sided Lipschitz drift; solved by damped Newton with a
    /// bisection fallback in one dimension.
    GeneralMonotone,
}

/// Superlinear drift part. The frozen-measure variant also reads measure
/// statistics and is only usable with the frozen-measure split-step scheme
/// (explicit schemes may evaluate it with the current cloud's statistics).
#[derive(Clone)]
pub enum DriftV<T: Real> {
    Plain(StateCoeff<T>),
    FrozenMeasure(MeasureCoeff<T>),
}

impl<T: Real> DriftV<T> {
    /// Evaluate with measure statistics available (explicit-scheme path).
    #[inline]
    pub fn eval(&self, t: T, x: &[T], stats: &MeasureStats<T>, out: &mut [T]) {
        match self {
            DriftV::Plain(f) => f(t, x, out),
            DriftV::FrozenMeasure(f) => f(t, x, stats, out),
        }
    }

    /// Evaluate the measure-free variant; errors if the drift needs stats.
    #[inline]
    pub fn eval_plain(&self, t: T, x: &[T], out: &mut [T]) -> Result<()> {
        match self {
            DriftV::Plain(f) => {
                f(t, x, out);
                Ok(())
            }
            DriftV::FrozenMeasure(_) => Err(Error::Unsupported(
                "this model's superlinear drift depends on the measure; use the frozen-measure scheme"
                    .into(),
            )),
        }
    }

    pub fn needs_measure(&self) -> bool {
        matches!(self, DriftV::FrozenMeasure(_))
    }
}

impl<T: Real> std::fmt::Debug for DriftV<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DriftV::Plain(_) => f.write_str("DriftV::Plain(..)"),
            DriftV::FrozenMeasure(_) => f.write_str("DriftV::FrozenMeasure(..)"),
        }
    }
}

/// A complete model: coefficient triple, structural constants and solver hint.
///
/// Immutable after construction and safe to share across threads; coefficient
/// functions must be pure.
#[derive(Clone)]
pub struct ModelSpec<T: Real> {
    /// State dimension `d` per particle.
    pub dim: usize,
    /// Brownian dimension `l` per particle.
    pub noise_dim: usize,
    pub v: DriftV<T>,
    pub b: MeasureCoeff<T>,
    /// Diffusion, written row-major into a `dim x noise_dim` buffer.
    pub sigma: MeasureCoeff<T>,
    pub constants: ModelConstants<T>,
    pub solver_hint: SolverHint<T>,
    pub stats: StatDescriptor,
    /// Human-readable name used in reports.
    pub name: String,
}

impl<T: Real> std::fmt::Debug for ModelSpec<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("noise_dim", &self.noise_dim)
            .field("constants", &self.constants)
            .field("solver_hint", &self.solver_hint)
            .finish()
    }
}

impl<T: Real> ModelSpec<T> {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.noise_dim == 0 {
            return Err(Error::Config("model dimensions must be >= 1".into()));
        }
        if let SolverHint::ComponentwiseCubic { coeffs } = &self.solver_hint {
            if coeffs.len() != self.dim {
                return Err(Error::Dimension(format!(
                    "solver hint has {} cubic components for dim {}",
                    coeffs.len(),
                    self.dim
                )));
            }
        }
        Ok(())
    }

    /// Combined drift `v + b` used by the explicit schemes.
    #[inline]
    pub fn combined_drift(&self, t: T, x: &[T], stats: &MeasureStats<T>, out: &mut [T], scratch: &mut [T]) {
        self.v.eval(t, x, stats, scratch);
        (self.b)(t, x, stats, out);
        for (o, s) in out.iter_mut().zip(scratch.iter()) {
            *o += *s;
        }
    }
}

/// Empirical-measure statistics of a cloud.
///
/// The reduction is canonical: per coordinate, the summands are brought into
/// IEEE total order and folded left to right.  The result is therefore a pure
/// function of the multiset of particle states (bit-for-bit permutation
/// invariance) and is identical for any thread count.  Cost is O(N d log N).
pub fn empirical_stats<T: Real>(
    cloud: &ParticleCloud<T>,
    descriptor: &StatDescriptor,
) -> Result<MeasureStats<T>> {
    let n = cloud.len();
    if n == 0 {
        return Err(Error::EmptyCloud);
    }
    let dim = cloud.dim();
    let inv_n = T::one() / T::of_usize(n);
    let states = cloud.states();

    let moments: Vec<(T, T)> = (0..dim)
        .into_par_iter()
        .map(|j| {
            let mut values: Vec<T> = (0..n).map(|i| states[i * dim + j]).collect();
            let sum = reduce::canonical_sum(&mut values);
            // `values` is sorted now; squares of a sorted-by-total-order slice
            // are not themselves ordered, so order them again.
            for v in values.iter_mut() {
                *v = *v * *v;
            }
            let sum_sq = reduce::canonical_sum(&mut values);
            (sum * inv_n, sum_sq * inv_n)
        })
        .collect();

    let mean = moments.iter().map(|m| m.0).collect();
    let second_moment = moments.iter().map(|m| m.1).collect();
    let cloud_handle = if descriptor.needs_full_cloud() {
        Some(Arc::new(states.to_vec()))
    } else {
        None
    };
    Ok(MeasureStats { mean, second_moment, cloud: cloud_handle })
}

/// Sampling box for [`one_sided_lipschitz_ratio`]: times uniform in
/// `[0, t_max]`, states uniform in `[-half_width, half_width]^d`.
#[derive(Debug, Clone, Copy)]
pub struct SamplingBox {
    pub t_max: f64,
    pub half_width: f64,
}

impl Default for SamplingBox {
    fn default() -> Self {
        SamplingBox { t_max: 1.0, half_width: 10.0 }
    }
}

/// Largest observed ratio `<x - x', v(t,x) - v(t,x')> / |x - x'|^2` over
/// random `(t, x, x')` triples from `box_`.
///
/// A model-authoring sanity tool: the result should not exceed the stored
/// `L_v` by more than numerical noise.  Frozen-measure drifts are evaluated
/// with statistics of a small synthetic cloud drawn from the same box.
pub fn one_sided_lipschitz_ratio<T: Real>(
    spec: &ModelSpec<T>,
    samples: usize,
    rng_seed: u64,
    box_: SamplingBox,
) -> Result<T> {
    if samples == 0 {
        return Err(Error::Config("need at least one sample".into()));
    }
    let dim = spec.dim;
    let mut rng = UtilityRng::new(rng_seed);
    let mut x = vec![T::zero(); dim];
    let mut y = vec![T::zero(); dim];
    let mut vx = vec![T::zero(); dim];
    let mut vy = vec![T::zero(); dim];
    let mut worst = T::neg_infinity();
    for _ in 0..samples {
        let t = T::of(rng.uniform_in(0.0, box_.t_max));
        for j in 0..dim {
            x[j] = T::of(rng.uniform_in(-box_.half_width, box_.half_width));
            y[j] = T::of(rng.uniform_in(-box_.half_width, box_.half_width));
        }
        let stats = synthetic_stats(dim, &mut rng, box_);
        spec.v.eval(t, &x, &stats, &mut vx);
        spec.v.eval(t, &y, &stats, &mut vy);
        let mut dot = T::zero();
        let mut norm_sq = T::zero();
        for j in 0..dim {
            let dx = x[j] - y[j];
            dot += dx * (vx[j] - vy[j]);
            norm_sq += dx * dx;
        }
        if norm_sq > T::zero() {
            let ratio = dot / norm_sq;
            if ratio > worst {
                worst = ratio;
            }
        }
    }
    Ok(worst)
}

/// Statistics of a 4-point synthetic cloud drawn from the box (always a
/// legitimate empirical measure).
fn synthetic_stats<T: Real>(dim: usize, rng: &mut UtilityRng, box_: SamplingBox) -> MeasureStats<T> {
    let mut mean = vec![T::zero(); dim];
    let mut second = vec![T::zero(); dim];
    let quarter = T::of(0.25);
    for _ in 0..4 {
        for j in 0..dim {
            let s = T::of(rng.uniform_in(-box_.half_width, box_.half_width));
            mean[j] += s * quarter;
            second[j] += s * s * quarter;
        }
    }
    MeasureStats { mean, second_moment: second, cloud: None }
}

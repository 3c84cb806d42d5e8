//! Simulation toolkit for McKean-Vlasov SDEs via interacting particle systems.
//!
//! The equations treated here have drift split into a superlinear part `v(t, x)`
//! and a measure-coupled Lipschitz part `b(t, x, mu)`, with diffusion
//! `sigma(t, x, mu)`, where `mu` is approximated by the empirical measure of an
//! `N`-particle cloud.  The toolkit provides:
//!
//! * a split-step scheme that solves `y = x + h v(t, y)` implicitly and then
//!   applies an explicit Euler update with the measure terms ([`schemes`]),
//! * tamed and per-particle adaptive-timestep Euler baselines,
//! * counter-based Brownian increment generation so that every scheme and every
//!   refinement level consumes the same underlying paths ([`noise`]),
//! * a deterministic data-parallel driver ([`engine`]) whose output is
//!   bit-identical for any thread count,
//! * error metrics, convergence-rate fits and mean-square contractivity
//!   diagnostics ([`analysis`]).
//!
//! All numeric code is generic over the scalar type through [`Real`]; the
//! `*64` aliases at the crate root fix `f64`, which is what the CLI uses.

// Validation sites use `!(x > 0)` on purpose: the negation also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::cmp::Ordering;
use std::fmt;

pub mod analysis;
pub mod builtin;
pub mod engine;
pub mod implicit;
pub mod model;
pub mod noise;
mod reduce;
pub mod schemes;

pub use builtin::{make_builtin, BuiltinModel, Params};
pub use engine::{Engine, ParticleCloud, SnapshotPolicy, Trajectory};
pub use model::{MeasureStats, ModelConstants, ModelSpec};
pub use noise::{InitialSampler, NoiseTable};
pub use schemes::{AdaptiveRule, SchemeConfig, SchemeKind};

/// Scalar type for all floating-point computation: `f32` or `f64`.
///
/// Implementations must provide a total order so that reductions over particle
/// clouds can be canonicalised (sorted) before summation; that is what makes
/// the empirical-measure statistics permutation-invariant bit for bit.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::NumAssign
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    /// IEEE total order (`-NaN < -inf < ... < +inf < NaN`).
    fn total_order(a: Self, b: Self) -> Ordering;

    /// Convert an `f64` constant. Exact for `f64`, rounded for `f32`.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite constant")
    }

    /// Convert a count.
    #[inline]
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("count fits the scalar type")
    }
}

impl Real for f64 {
    #[inline]
    fn total_order(a: Self, b: Self) -> Ordering {
        a.total_cmp(&b)
    }
}

impl Real for f32 {
    #[inline]
    fn total_order(a: Self, b: Self) -> Ordering {
        a.total_cmp(&b)
    }
}

/// Errors from model construction, configuration checks and numerical solves.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("step size h={h} violates the implicit-step bound for one-sided constant {l_v} (max allowed {max_h})")]
    StepSize { l_v: f64, h: f64, max_h: f64 },
    #[error("implicit solve did not converge after {iterations} iterations (residual {residual:e})")]
    SolveDiverged { residual: f64, iterations: usize },
    #[error("empty particle cloud")]
    EmptyCloud,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("grid misalignment: {0}")]
    Misaligned(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl Error {
    /// True for errors caused by the run configuration rather than by the
    /// numerics; the CLI maps these to exit code 2 and the rest to 3.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::StepSize { .. }
                | Error::EmptyCloud
                | Error::Dimension(_)
                | Error::Misaligned(_)
                | Error::Unsupported(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Concrete aliases for the common `f64` instantiation.
pub type ModelSpec64 = model::ModelSpec<f64>;
pub type ModelConstants64 = model::ModelConstants<f64>;
pub type MeasureStats64 = model::MeasureStats<f64>;
pub type NoiseTable64 = noise::NoiseTable<f64>;
pub type InitialSampler64 = noise::InitialSampler<f64>;
pub type SchemeConfig64 = schemes::SchemeConfig<f64>;
pub type ParticleCloud64 = engine::ParticleCloud<f64>;
pub type Trajectory64 = engine::Trajectory<f64>;
pub type Engine64 = engine::Engine<f64>;

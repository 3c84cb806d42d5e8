//! One-step advancement rules for the particle system.
//!
//! All schemes share the same skeleton: evaluate empirical statistics of a
//! cloud (a deterministic, permutation-invariant reduction), then update every
//! particle independently from its own Brownian increments.  The split-step
//! scheme inserts the implicit stage before the measure is formed:
//!
//! * `split_step`: per particle solve `y = x + h v(t, y)`, form the empirical
//!   measure of the `y` cloud, then `x' = y + b(t, y, mu) h + sigma(t, y, mu) dW`.
//! * `frozen_split_step`: same, but the statistics are taken from the incoming
//!   `x` cloud before the implicit stage and reused in both phases (required
//!   for drifts whose superlinear part reads the measure).
//! * `tamed_step`: explicit Euler with the combined drift `v + b` scaled by
//!   `1 / (1 + M^-alpha |v + b|)`.
//! * `adaptive_step`: explicit Euler with a per-particle step rule, substeps
//!   quantized to the fine noise grid, statistics frozen at the coarse grid.
//! * `explicit_euler_step`: the untamed baseline (the divergence demo).
//!
//! Once a particle state turns non-finite it is flagged and frozen; aggregate
//! statistics over such clouds become non-finite rather than aborting the run.

use rayon::prelude::*;

use crate::engine::ParticleCloud;
use crate::implicit::{solve_implicit, validate_stepsize, SolveSettings};
use crate::model::{empirical_stats, MeasureStats, ModelSpec};
use crate::noise::NoiseTable;
use crate::{Error, Real, Result};

/// Per-particle step-size rules for the adaptive scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdaptiveRule {
    /// `h * min(1, |x|^-2)`
    InverseSquare,
    /// `h * min(1, |x|^2 / |v(t,x) + b(t,x,mu)|^2)`
    DriftRatio,
}

impl AdaptiveRule {
    pub fn label(&self) -> &'static str {
        match self {
            AdaptiveRule::InverseSquare => "inv_sq",
            AdaptiveRule::DriftRatio => "drift_ratio",
        }
    }
}

/// Scheme selector plus its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SchemeKind<T: Real> {
    SplitStep,
    FrozenMeasureSplitStep,
    Tamed { alpha: T },
    Adaptive { rule: AdaptiveRule },
    ExplicitEuler,
}

impl<T: Real> SchemeKind<T> {
    pub fn label(&self) -> String {
        match self {
            SchemeKind::SplitStep => "ssm".into(),
            SchemeKind::FrozenMeasureSplitStep => "frozen_ssm".into(),
            SchemeKind::Tamed { alpha } => format!("tamed_{alpha}"),
            SchemeKind::Adaptive { rule } => format!("adaptive_{}", rule.label()),
            SchemeKind::ExplicitEuler => "euler".into(),
        }
    }

    pub fn is_split_step(&self) -> bool {
        matches!(self, SchemeKind::SplitStep | SchemeKind::FrozenMeasureSplitStep)
    }
}

/// A scheme on a uniform coarse grid: `steps * h` spans the horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeConfig<T: Real> {
    pub kind: SchemeKind<T>,
    pub h: T,
    pub steps: usize,
}

impl<T: Real> SchemeConfig<T> {
    pub fn new(kind: SchemeKind<T>, h: T, steps: usize) -> Self {
        SchemeConfig { kind, h, steps }
    }

    pub fn label(&self) -> String {
        self.kind.label()
    }

    pub fn validate(&self, horizon: T) -> Result<()> {
        if !(self.h > T::zero()) || !self.h.is_finite() {
            return Err(Error::Config(format!("scheme step h must be positive, got {}", self.h)));
        }
        if self.steps == 0 {
            return Err(Error::Config("scheme needs at least one step".into()));
        }
        let span = T::of_usize(self.steps) * self.h;
        let tol = T::of(1e-9) * horizon.max(T::one());
        if (span - horizon).abs() > tol {
            return Err(Error::Misaligned(format!(
                "steps * h = {span} does not reach the horizon {horizon}"
            )));
        }
        if let SchemeKind::Tamed { alpha } = self.kind {
            if !(alpha > T::zero() && alpha <= T::one()) {
                return Err(Error::Config(format!("taming exponent must lie in (0, 1], got {alpha}")));
            }
        }
        Ok(())
    }
}

/// Immutable context for one coarse step.
pub struct StepCtx<'a, T: Real> {
    pub noise: &'a NoiseTable<T>,
    pub solve: &'a SolveSettings<T>,
    /// Particles per parallel chunk; fixed by the engine, not by thread count.
    pub chunk: usize,
    /// Start time of the coarse step.
    pub t: T,
    /// Coarse step length.
    pub h: T,
    /// Fine-grid index of the step start.
    pub fine_start: u64,
    /// Fine increments per coarse step.
    pub fine_per_step: u64,
    /// Total coarse steps of the run (enters the taming factor).
    pub steps_total: usize,
}

/// Output of one coarse step.
#[derive(Debug, Clone)]
pub struct StepRecord<T: Real> {
    pub cloud: ParticleCloud<T>,
    /// Implicit-stage cloud; present for the split-step schemes only.
    pub ystar: Option<ParticleCloud<T>>,
    /// Per-particle substep counts; present for the adaptive scheme only.
    pub substeps: Option<Vec<u32>>,
}

/// Advance one coarse step with the given scheme kind.
pub fn advance<T: Real>(
    spec: &ModelSpec<T>,
    cloud: &ParticleCloud<T>,
    kind: &SchemeKind<T>,
    ctx: &StepCtx<'_, T>,
) -> Result<StepRecord<T>> {
    match kind {
        SchemeKind::SplitStep => split_step(spec, cloud, ctx),
        SchemeKind::FrozenMeasureSplitStep => frozen_split_step(spec, cloud, ctx),
        SchemeKind::Tamed { alpha } => tamed_step(spec, cloud, *alpha, ctx),
        SchemeKind::Adaptive { rule } => adaptive_step(spec, cloud, *rule, ctx),
        SchemeKind::ExplicitEuler => explicit_euler_step(spec, cloud, ctx),
    }
}

struct Scratch<T> {
    drift: Vec<T>,
    extra: Vec<T>,
    sigma: Vec<T>,
    dw: Vec<T>,
}

impl<T: Real> Scratch<T> {
    fn new(dim: usize, noise_dim: usize) -> Self {
        Scratch {
            drift: vec![T::zero(); dim],
            extra: vec![T::zero(); dim],
            sigma: vec![T::zero(); dim * noise_dim],
            dw: vec![T::zero(); noise_dim],
        }
    }
}

/// Run `body` over all particles in fixed-size chunks with one scratch value
/// per chunk. Chunk boundaries depend only on the particle count and the
/// configured chunk size, and every chunk writes its own output range, so the
/// result is bit-identical for any thread count.
fn for_particles<T, S, M, F>(
    states: &mut [T],
    flags: &mut [bool],
    dim: usize,
    chunk: usize,
    make_scratch: M,
    body: F,
) -> Result<()>
where
    T: Real,
    S: Send,
    M: Fn() -> S + Send + Sync,
    F: Fn(usize, &mut [T], &mut bool, &mut S) -> Result<()> + Send + Sync,
{
    states
        .par_chunks_mut(chunk * dim)
        .zip(flags.par_chunks_mut(chunk))
        .enumerate()
        .try_for_each(|(chunk_idx, (state_block, flag_block))| -> Result<()> {
            let base = chunk_idx * chunk;
            let mut scratch = make_scratch();
            for (offset, flag) in flag_block.iter_mut().enumerate() {
                let i = base + offset;
                let state = &mut state_block[offset * dim..(offset + 1) * dim];
                body(i, state, flag, &mut scratch)?;
            }
            Ok(())
        })
}

#[inline]
fn mark_if_non_finite<T: Real>(state: &[T], flag: &mut bool) {
    if state.iter().any(|x| !x.is_finite()) {
        *flag = true;
    }
}

/// Split-step scheme: implicit stage, statistics of the stage cloud, explicit
/// measure update.
pub fn split_step<T: Real>(
    spec: &ModelSpec<T>,
    cloud: &ParticleCloud<T>,
    ctx: &StepCtx<'_, T>,
) -> Result<StepRecord<T>> {
    validate_stepsize(spec.constants.l_v, ctx.h)?;
    split_step_impl(spec, cloud, ctx, None)
}

/// Split-step with the measure frozen at the incoming cloud: the statistics
/// are computed from the `x` cloud before the implicit stage and reused in
/// both phases.
pub fn frozen_split_step<T: Real>(
    spec: &ModelSpec<T>,
    cloud: &ParticleCloud<T>,
    ctx: &StepCtx<'_, T>,
) -> Result<StepRecord<T>> {
    validate_stepsize(spec.constants.l_v, ctx.h)?;
    let frozen = empirical_stats(cloud, &spec.stats)?;
    split_step_impl(spec, cloud, ctx, Some(frozen))
}

#[allow(clippy::needless_range_loop)]
fn split_step_impl<T: Real>(
    spec: &ModelSpec<T>,
    cloud: &ParticleCloud<T>,
    ctx: &StepCtx<'_, T>,
    frozen: Option<MeasureStats<T>>,
) -> Result<StepRecord<T>> {
    let dim = spec.dim;
    let t = ctx.t;
    let h = ctx.h;

    // Phase 1: implicit stage per particle.
    let mut stage_states = cloud.states().to_vec();
    let mut stage_flags = cloud.flags().to_vec();
    for_particles(&mut stage_states, &mut stage_flags, dim, ctx.chunk, || (), |_i, state, flag, _s| {
        if *flag {
            return Ok(()); // frozen particle keeps its state
        }
        let report = solve_implicit(spec, t, state, h, frozen.as_ref(), ctx.solve)?;
        state.copy_from_slice(&report.solution);
        Ok(())
    })?;
    let stage_cloud = ParticleCloud::from_parts(t, dim, stage_states, stage_flags);

    // Phase 2: empirical measure (of the stage cloud, unless frozen upstream).
    let stats = match &frozen {
        Some(s) => s.clone(),
        None => empirical_stats(&stage_cloud, &spec.stats)?,
    };

    // Phase 3: explicit update from the stage states.
    let mut next_states = stage_cloud.states().to_vec();
    let mut next_flags = stage_cloud.flags().to_vec();
    let make_scratch = || Scratch::new(dim, spec.noise_dim);
    for_particles(&mut next_states, &mut next_flags, dim, ctx.chunk, make_scratch, |i, state, flag, s| {
        if *flag {
            return Ok(());
        }
        (spec.b)(t, state, &stats, &mut s.drift);
        (spec.sigma)(t, state, &stats, &mut s.sigma);
        ctx.noise
            .increment_sum_into(i, ctx.fine_start, ctx.fine_start + ctx.fine_per_step, &mut s.dw);
        for r in 0..dim {
            let mut acc = state[r] + s.drift[r] * h;
            for c in 0..spec.noise_dim {
                acc += s.sigma[r * spec.noise_dim + c] * s.dw[c];
            }
            state[r] = acc;
        }
        mark_if_non_finite(state, flag);
        Ok(())
    })?;

    Ok(StepRecord {
        cloud: ParticleCloud::from_parts(t + h, dim, next_states, next_flags),
        ystar: Some(stage_cloud),
        substeps: None,
    })
}

enum DriftMode<T> {
    Plain,
    Tamed { scale: T },
}

#[allow(clippy::needless_range_loop)]
fn explicit_step_impl<T: Real>(
    spec: &ModelSpec<T>,
    cloud: &ParticleCloud<T>,
    ctx: &StepCtx<'_, T>,
    mode: DriftMode<T>,
) -> Result<ParticleCloud<T>> {
    let dim = spec.dim;
    let t = ctx.t;
    let h = ctx.h;
    let stats = empirical_stats(cloud, &spec.stats)?;
    let mut next_states = cloud.states().to_vec();
    let mut next_flags = cloud.flags().to_vec();
    let make_scratch = || Scratch::new(dim, spec.noise_dim);
    for_particles(&mut next_states, &mut next_flags, dim, ctx.chunk, make_scratch, |i, state, flag, s| {
        if *flag {
            return Ok(());
        }
        spec.combined_drift(t, state, &stats, &mut s.drift, &mut s.extra);
        if let DriftMode::Tamed { scale } = mode {
            let norm = s.drift.iter().fold(T::zero(), |acc, d| acc + *d * *d).sqrt();
            let damp = T::one() / (T::one() + scale * norm);
            for d in s.drift.iter_mut() {
                *d *= damp;
            }
        }
        (spec.sigma)(t, state, &stats, &mut s.sigma);
        ctx.noise
            .increment_sum_into(i, ctx.fine_start, ctx.fine_start + ctx.fine_per_step, &mut s.dw);
        for r in 0..dim {
            let mut acc = state[r] + s.drift[r] * h;
            for c in 0..spec.noise_dim {
                acc += s.sigma[r * spec.noise_dim + c] * s.dw[c];
            }
            state[r] = acc;
        }
        mark_if_non_finite(state, flag);
        Ok(())
    })?;
    Ok(ParticleCloud::from_parts(t + h, dim, next_states, next_flags))
}

/// Tamed Euler: the combined drift `v + b` is scaled by
/// `1 / (1 + M^-alpha |v + b|)` before the update.
pub fn tamed_step<T: Real>(
    spec: &ModelSpec<T>,
    cloud: &ParticleCloud<T>,
    alpha: T,
    ctx: &StepCtx<'_, T>,
) -> Result<StepRecord<T>> {
    let scale = T::of_usize(ctx.steps_total).powf(-alpha);
    let cloud = explicit_step_impl(spec, cloud, ctx, DriftMode::Tamed { scale })?;
    Ok(StepRecord { cloud, ystar: None, substeps: None })
}

/// Plain (untamed) Euler baseline. Overflow to non-finite values is flagged,
/// not fatal: it is the expected demonstration for superlinear drifts.
pub fn explicit_euler_step<T: Real>(
    spec: &ModelSpec<T>,
    cloud: &ParticleCloud<T>,
    ctx: &StepCtx<'_, T>,
) -> Result<StepRecord<T>> {
    let cloud = explicit_step_impl(spec, cloud, ctx, DriftMode::Plain)?;
    Ok(StepRecord { cloud, ystar: None, substeps: None })
}

/// Proposed substep for the adaptive rule, in (0, h] for finite states.
pub fn propose_substep<T: Real>(
    rule: AdaptiveRule,
    spec: &ModelSpec<T>,
    t: T,
    state: &[T],
    stats: &MeasureStats<T>,
    h: T,
) -> T {
    let norm_sq = state.iter().fold(T::zero(), |acc, x| acc + *x * *x);
    match rule {
        AdaptiveRule::InverseSquare => {
            if norm_sq == T::zero() {
                h
            } else {
                h * T::one().min(T::one() / norm_sq)
            }
        }
        AdaptiveRule::DriftRatio => {
            let mut drift = vec![T::zero(); spec.dim];
            let mut extra = vec![T::zero(); spec.dim];
            spec.combined_drift(t, state, stats, &mut drift, &mut extra);
            let drift_sq = drift.iter().fold(T::zero(), |acc, d| acc + *d * *d);
            if drift_sq == T::zero() {
                h
            } else {
                h * T::one().min(norm_sq / drift_sq)
            }
        }
    }
}

/// Quantize a proposed substep down to fine-grid multiples: at least one fine
/// step, at most the remaining fine steps of the coarse interval.
#[inline]
pub(crate) fn quantize_substep<T: Real>(proposal: T, h_fine: T, remaining: u64) -> u64 {
    let raw = (proposal / h_fine).floor().to_f64().unwrap_or(0.0);
    let sub = if raw >= remaining as f64 { remaining } else { raw as u64 };
    sub.max(1).min(remaining)
}

/// Adaptive-timestep Euler over one coarse interval: each particle substeps
/// independently with the statistics frozen at the interval start, and lands
/// exactly on the coarse boundary (substeps are counted on the fine grid).
#[allow(clippy::needless_range_loop)]
pub fn adaptive_step<T: Real>(
    spec: &ModelSpec<T>,
    cloud: &ParticleCloud<T>,
    rule: AdaptiveRule,
    ctx: &StepCtx<'_, T>,
) -> Result<StepRecord<T>> {
    let dim = spec.dim;
    let h_fine = ctx.noise.h_fine();
    let stats = empirical_stats(cloud, &spec.stats)?;
    let mut next_states = cloud.states().to_vec();
    let mut next_flags = cloud.flags().to_vec();
    let mut substeps = vec![0u32; cloud.len()];

    next_states
        .par_chunks_mut(ctx.chunk * dim)
        .zip(next_flags.par_chunks_mut(ctx.chunk))
        .zip(substeps.par_chunks_mut(ctx.chunk))
        .enumerate()
        .try_for_each(|(chunk_idx, ((state_block, flag_block), count_block))| -> Result<()> {
            let base = chunk_idx * ctx.chunk;
            let mut s = Scratch::new(dim, spec.noise_dim);
            for offset in 0..flag_block.len() {
                let i = base + offset;
                let state = &mut state_block[offset * dim..(offset + 1) * dim];
                let flag = &mut flag_block[offset];
                if *flag {
                    continue;
                }
                let mut consumed: u64 = 0;
                while consumed < ctx.fine_per_step {
                    let t_cur = ctx.t + T::of(consumed as f64) * h_fine;
                    let proposal = propose_substep(rule, spec, t_cur, state, &stats, ctx.h);
                    if !(proposal > T::zero()) {
                        return Err(Error::Numerical(format!(
                            "adaptive rule proposed a non-positive substep {proposal}"
                        )));
                    }
                    let remaining = ctx.fine_per_step - consumed;
                    let sub = quantize_substep(proposal, h_fine, remaining);
                    let dt = T::of(sub as f64) * h_fine;
                    let from = ctx.fine_start + consumed;
                    ctx.noise.increment_sum_into(i, from, from + sub, &mut s.dw);
                    spec.combined_drift(t_cur, state, &stats, &mut s.drift, &mut s.extra);
                    (spec.sigma)(t_cur, state, &stats, &mut s.sigma);
                    for r in 0..dim {
                        let mut acc = state[r] + s.drift[r] * dt;
                        for c in 0..spec.noise_dim {
                            acc += s.sigma[r * spec.noise_dim + c] * s.dw[c];
                        }
                        state[r] = acc;
                    }
                    consumed += sub;
                    count_block[offset] = count_block[offset].saturating_add(1);
                    mark_if_non_finite(state, flag);
                    if *flag {
                        break;
                    }
                }
            }
            Ok(())
        })?;

    Ok(StepRecord {
        cloud: ParticleCloud::from_parts(ctx.t + ctx.h, dim, next_states, next_flags),
        ystar: None,
        substeps: Some(substeps),
    })
}

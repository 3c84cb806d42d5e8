//! Multi-step simulation driver with deterministic parallelism.
//!
//! The engine owns a worker pool.  Particle phases are data-parallel over
//! contiguous chunks whose boundaries depend only on the particle count and a
//! fixed chunk size; the empirical-measure reduction is a synchronization
//! barrier built on canonical (sorted-order) sums.  Together with the
//! counter-based noise this makes every trajectory bit-identical for any
//! thread count.

use std::time::Instant;

use crate::implicit::{validate_stepsize, SolveSettings};
use crate::model::ModelSpec;
use crate::noise::{InitialSampler, NoiseTable};
use crate::reduce;
use crate::schemes::{advance, SchemeConfig, SchemeKind, StepCtx};
use crate::{Error, Real, Result};

/// The states of all `N` particles at one grid time, row-major `N x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud<T: Real> {
    time: T,
    dim: usize,
    states: Vec<T>,
    /// A set flag marks a particle whose state went non-finite; it is frozen
    /// from then on.
    flags: Vec<bool>,
}

impl<T: Real> ParticleCloud<T> {
    pub fn new(time: T, dim: usize, states: Vec<T>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Dimension("particle dimension must be >= 1".into()));
        }
        if states.is_empty() || !states.len().is_multiple_of(dim) {
            return Err(Error::Dimension(format!(
                "state buffer of length {} does not hold whole particles of dimension {dim}",
                states.len()
            )));
        }
        let flags = (0..states.len() / dim)
            .map(|i| states[i * dim..(i + 1) * dim].iter().any(|x| !x.is_finite()))
            .collect();
        Ok(ParticleCloud { time, dim, states, flags })
    }

    pub(crate) fn from_parts(time: T, dim: usize, states: Vec<T>, flags: Vec<bool>) -> Self {
        debug_assert_eq!(states.len(), flags.len() * dim);
        ParticleCloud { time, dim, states, flags }
    }

    /// Empty cloud placeholder (only useful for error-path tests).
    pub fn empty(dim: usize) -> Self {
        ParticleCloud { time: T::zero(), dim, states: Vec::new(), flags: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn time(&self) -> T {
        self.time
    }

    pub(crate) fn set_time(&mut self, t: T) {
        self.time = t;
    }

    pub fn states(&self) -> &[T] {
        &self.states
    }

    pub fn particle(&self, i: usize) -> &[T] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn is_flagged(&self, i: usize) -> bool {
        self.flags[i]
    }

    /// Number of non-finite (frozen) particles.
    pub fn flagged(&self) -> usize {
        self.flags.iter().filter(|f| **f).count()
    }

    /// Largest |component| over the cloud (infinite or NaN if states are).
    pub fn max_abs_state(&self) -> T {
        reduce::total_max(&self.states.iter().map(|x| x.abs()).collect::<Vec<_>>())
    }

    /// `(1/N) sum_i |x_i|^4`, canonical summation.
    pub fn mean_norm4(&self) -> T {
        let mut values: Vec<T> = (0..self.len())
            .map(|i| {
                let sq = self
                    .particle(i)
                    .iter()
                    .fold(T::zero(), |acc, x| acc + *x * *x);
                sq * sq
            })
            .collect();
        reduce::canonical_sum(&mut values) / T::of_usize(self.len())
    }
}

/// Which grid points of a run are kept.
#[derive(Debug, Clone, PartialEq)]
pub enum SnapshotPolicy<T: Real> {
    /// Keep `t = 0` and the terminal cloud (default; memory is `2 N d`).
    TerminalOnly,
    /// Keep `t = 0`, every k-th step and the terminal cloud.
    EveryK(usize),
    /// Keep `t = 0` and the listed grid times.
    Times(Vec<T>),
}

impl<T: Real> SnapshotPolicy<T> {
    /// Marks of length `steps + 1`; index 0 is always kept.
    fn resolve(&self, h: T, steps: usize) -> Result<Vec<bool>> {
        let mut keep = vec![false; steps + 1];
        keep[0] = true;
        match self {
            SnapshotPolicy::TerminalOnly => keep[steps] = true,
            SnapshotPolicy::EveryK(k) => {
                if *k == 0 {
                    return Err(Error::Config("snapshot stride must be >= 1".into()));
                }
                for n in (0..=steps).step_by(*k) {
                    keep[n] = true;
                }
                keep[steps] = true;
            }
            SnapshotPolicy::Times(times) => {
                let h = h.to_f64().unwrap();
                for t in times {
                    let tf = t.to_f64().unwrap_or(f64::NAN);
                    let n = (tf / h).round();
                    if !tf.is_finite() || (tf - n * h).abs() > 1e-9 * tf.abs().max(1.0) {
                        return Err(Error::Misaligned(format!(
                            "snapshot time {tf} is not on the coarse grid (h = {h})"
                        )));
                    }
                    let n = n as usize;
                    if n > steps {
                        return Err(Error::Misaligned(format!(
                            "snapshot time {tf} lies beyond the horizon"
                        )));
                    }
                    keep[n] = true;
                }
            }
        }
        Ok(keep)
    }
}

/// Snapshots of one run, plus enough metadata to reproduce it.
#[derive(Debug, Clone)]
pub struct Trajectory<T: Real> {
    times: Vec<T>,
    clouds: Vec<ParticleCloud<T>>,
    scheme_label: String,
    seed: u64,
    step_seconds: Vec<f64>,
}

impl<T: Real> Trajectory<T> {
    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn clouds(&self) -> &[ParticleCloud<T>] {
        &self.clouds
    }

    pub fn terminal(&self) -> &ParticleCloud<T> {
        self.clouds.last().expect("a trajectory holds at least the initial cloud")
    }

    pub fn scheme_label(&self) -> &str {
        &self.scheme_label
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Wall time of each coarse step, in seconds.
    pub fn step_seconds(&self) -> &[f64] {
        &self.step_seconds
    }

    pub fn total_seconds(&self) -> f64 {
        self.step_seconds.iter().sum()
    }

    /// Particles flagged non-finite in the terminal cloud.
    pub fn terminal_flagged(&self) -> usize {
        self.terminal().flagged()
    }
}

const DEFAULT_CHUNK: usize = 64;

/// Simulation driver: worker pool, chunking policy and solver settings.
#[derive(Debug)]
pub struct Engine<T: Real> {
    threads: usize,
    chunk_size: usize,
    solve: SolveSettings<T>,
    pool: rayon::ThreadPool,
}

impl<T: Real> Engine<T> {
    /// An engine with exactly `threads` workers (>= 1). The pool is owned by
    /// the engine, never the process-global one, so `threads = 1` really is
    /// serial execution; the output is identical for every thread count.
    pub fn new(threads: usize) -> Result<Self> {
        if threads == 0 {
            return Err(Error::Config("engine needs at least one thread".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        Ok(Engine { threads, chunk_size: DEFAULT_CHUNK, solve: SolveSettings::default(), pool })
    }

    pub fn with_chunk_size(mut self, chunk_size: usize) -> Result<Self> {
        if chunk_size == 0 {
            return Err(Error::Config("chunk size must be >= 1".into()));
        }
        self.chunk_size = chunk_size;
        Ok(self)
    }

    pub fn with_solve_settings(mut self, solve: SolveSettings<T>) -> Self {
        self.solve = solve;
        self
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }

    /// Coarse-grid geometry checks shared by all run entry points: the scheme
    /// must tile the table's horizon and its step must sit on the fine grid.
    fn plan(&self, spec: &ModelSpec<T>, scheme: &SchemeConfig<T>, noise: &NoiseTable<T>) -> Result<u64> {
        spec.validate()?;
        scheme.validate(noise.horizon())?;
        if noise.noise_dim() != spec.noise_dim {
            return Err(Error::Dimension(format!(
                "noise table has {} components, model wants {}",
                noise.noise_dim(),
                spec.noise_dim
            )));
        }
        let h = scheme.h.to_f64().unwrap();
        let h_fine = noise.h_fine().to_f64().unwrap();
        let per_step = (h / h_fine).round();
        if per_step < 1.0 || (h - per_step * h_fine).abs() > 1e-9 * h {
            return Err(Error::Misaligned(format!(
                "coarse step {h} is not an integer multiple of h_fine = {h_fine}"
            )));
        }
        let per_step = per_step as u64;
        if per_step * scheme.steps as u64 != noise.fine_steps() {
            return Err(Error::Misaligned(format!(
                "{} coarse steps of {} fine increments each do not tile the table's {} fine steps",
                scheme.steps,
                per_step,
                noise.fine_steps()
            )));
        }
        if scheme.kind.is_split_step() {
            validate_stepsize(spec.constants.l_v, scheme.h)?;
        }
        if spec.v.needs_measure() && matches!(scheme.kind, SchemeKind::SplitStep) {
            return Err(Error::Unsupported(format!(
                "model \"{}\" needs the frozen-measure split-step scheme",
                spec.name
            )));
        }
        Ok(per_step)
    }

    /// Advance a prepared initial cloud over the whole horizon.
    pub fn run_from_cloud(
        &self,
        spec: &ModelSpec<T>,
        scheme: &SchemeConfig<T>,
        initial: ParticleCloud<T>,
        noise: &NoiseTable<T>,
        snapshots: &SnapshotPolicy<T>,
    ) -> Result<Trajectory<T>> {
        let per_step = self.plan(spec, scheme, noise)?;
        if initial.dim() != spec.dim {
            return Err(Error::Dimension(format!(
                "initial cloud dimension {} does not match the model dimension {}",
                initial.dim(),
                spec.dim
            )));
        }
        if initial.len() > noise.particles() {
            return Err(Error::Config(format!(
                "noise table provides {} particle streams, run wants {}",
                noise.particles(),
                initial.len()
            )));
        }
        let keep = snapshots.resolve(scheme.h, scheme.steps)?;

        self.install(|| {
            let mut times = Vec::new();
            let mut clouds = Vec::new();
            let mut step_seconds = Vec::with_capacity(scheme.steps);
            let mut cloud = initial;
            cloud.set_time(T::zero());
            if keep[0] {
                times.push(T::zero());
                clouds.push(cloud.clone());
            }
            for n in 0..scheme.steps {
                let t_n = T::of_usize(n) * scheme.h;
                let ctx = StepCtx {
                    noise,
                    solve: &self.solve,
                    chunk: self.chunk_size,
                    t: t_n,
                    h: scheme.h,
                    fine_start: n as u64 * per_step,
                    fine_per_step: per_step,
                    steps_total: scheme.steps,
                };
                let started = Instant::now();
                let record = advance(spec, &cloud, &scheme.kind, &ctx)?;
                step_seconds.push(started.elapsed().as_secs_f64());
                cloud = record.cloud;
                cloud.set_time(T::of_usize(n + 1) * scheme.h);
                if keep[n + 1] {
                    times.push(cloud.time());
                    clouds.push(cloud.clone());
                }
            }
            Ok(Trajectory {
                times,
                clouds,
                scheme_label: scheme.label(),
                seed: noise.seed(),
                step_seconds,
            })
        })
    }

    /// Sample the initial cloud and advance it over the whole horizon.
    pub fn run(
        &self,
        spec: &ModelSpec<T>,
        scheme: &SchemeConfig<T>,
        n: usize,
        sampler: &InitialSampler<T>,
        noise: &NoiseTable<T>,
        snapshots: &SnapshotPolicy<T>,
    ) -> Result<Trajectory<T>> {
        let initial = sampler.sample(n)?;
        self.run_from_cloud(spec, scheme, initial, noise, snapshots)
    }

    /// Run several scheme configurations on identical Brownian paths and the
    /// same initial cloud, enabling pathwise comparisons.
    pub fn run_coupled(
        &self,
        spec: &ModelSpec<T>,
        schemes: &[SchemeConfig<T>],
        n: usize,
        sampler: &InitialSampler<T>,
        noise: &NoiseTable<T>,
        snapshots: &SnapshotPolicy<T>,
    ) -> Result<Vec<Trajectory<T>>> {
        let initial = sampler.sample(n)?;
        schemes
            .iter()
            .map(|scheme| self.run_from_cloud(spec, scheme, initial.clone(), noise, snapshots))
            .collect()
    }

    /// Run the same scheme twice from two initial laws on shared noise,
    /// returning the synchronized pair (the contractivity setup).
    #[allow(clippy::too_many_arguments)]
    pub fn run_two_state(
        &self,
        spec: &ModelSpec<T>,
        scheme: &SchemeConfig<T>,
        n: usize,
        sampler_x: &InitialSampler<T>,
        sampler_z: &InitialSampler<T>,
        noise: &NoiseTable<T>,
        snapshots: &SnapshotPolicy<T>,
    ) -> Result<(Trajectory<T>, Trajectory<T>)> {
        let x = self.run(spec, scheme, n, sampler_x, noise, snapshots)?;
        let z = self.run(spec, scheme, n, sampler_z, noise, snapshots)?;
        Ok((x, z))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin::{make_builtin, BuiltinModel, Params};
    use crate::noise::InitialLaw;
    use crate::schemes::SchemeKind;

    fn brownian_setup() -> (ModelSpec<f64>, InitialSampler<f64>) {
        let spec = make_builtin(
            BuiltinModel::OrnsteinUhlenbeckMV,
            &Params::new().set("rho", 0.0).set("lambda", 0.0).set("nu", 1.0),
        )
        .unwrap();
        let sampler = InitialSampler::new(InitialLaw::Point(vec![2.0]), 0, 0).unwrap();
        (spec, sampler)
    }

    #[test]
    fn pure_brownian_terminal_state_reconstructs_the_path() {
        let (spec, sampler) = brownian_setup();
        let noise = NoiseTable::new(3, 1, 1, 0.25, 4).unwrap();
        let engine = Engine::new(1).unwrap();
        let scheme = SchemeConfig::new(SchemeKind::SplitStep, 0.25, 4);
        let traj = engine
            .run(&spec, &scheme, 1, &sampler, &noise, &SnapshotPolicy::TerminalOnly)
            .unwrap();
        let w_total = noise.coarse_increment(0, 0.0, 1.0).unwrap()[0];
        assert_eq!(traj.terminal().states()[0].to_bits(), (2.0 + w_total).to_bits());
        assert_eq!(traj.times().len(), 2);
        assert_eq!(traj.times()[0], 0.0);
    }

    #[test]
    fn snapshot_policies_mark_expected_grid_points() {
        let every = SnapshotPolicy::<f64>::EveryK(2).resolve(0.25, 5).unwrap();
        assert_eq!(every, vec![true, false, true, false, true, true]);
        let times = SnapshotPolicy::Times(vec![0.5]).resolve(0.25, 5).unwrap();
        assert_eq!(times, vec![true, false, true, false, false, false]);
        assert!(SnapshotPolicy::Times(vec![0.3]).resolve(0.25, 5).is_err());
        assert!(SnapshotPolicy::Times(vec![9.0]).resolve(0.25, 5).is_err());
        assert!(SnapshotPolicy::<f64>::EveryK(0).resolve(0.25, 5).is_err());
    }

    #[test]
    fn grid_misalignment_is_rejected() {
        let (spec, sampler) = brownian_setup();
        let noise = NoiseTable::new(3, 1, 1, 0.25, 4).unwrap();
        let engine = Engine::new(1).unwrap();
        // 3 steps of 0.25 do not reach the horizon 1.0.
        let scheme = SchemeConfig::new(SchemeKind::SplitStep, 0.25, 3);
        assert!(matches!(
            engine.run(&spec, &scheme, 1, &sampler, &noise, &SnapshotPolicy::TerminalOnly),
            Err(Error::Misaligned(_))
        ));
        // step not a multiple of h_fine
        let scheme = SchemeConfig::new(SchemeKind::SplitStep, 1.0 / 3.0, 3);
        assert!(engine
            .run(&spec, &scheme, 1, &sampler, &noise, &SnapshotPolicy::TerminalOnly)
            .is_err());
    }

    #[test]
    fn thread_count_does_not_change_the_trajectory() {
        let spec = make_builtin(
            BuiltinModel::GinzburgLandau,
            &Params::new().set("sigma_prime", 1.5).set("c", 0.5),
        )
        .unwrap();
        let sampler = InitialSampler::new(
            InitialLaw::Normal { mean: vec![1.0], std: vec![0.5] },
            9,
            0,
        )
        .unwrap();
        let noise = NoiseTable::<f64>::new(9, 64, 1, 0.0125, 16).unwrap();
        let scheme = SchemeConfig::new(SchemeKind::SplitStep, 0.025, 8);
        let reference = Engine::new(1)
            .unwrap()
            .with_chunk_size(7)
            .unwrap()
            .run(&spec, &scheme, 64, &sampler, &noise, &SnapshotPolicy::EveryK(1))
            .unwrap();
        for threads in [2usize, 4, 8] {
            let traj = Engine::new(threads)
                .unwrap()
                .with_chunk_size(7)
                .unwrap()
                .run(&spec, &scheme, 64, &sampler, &noise, &SnapshotPolicy::EveryK(1))
                .unwrap();
            for (a, b) in reference.clouds().iter().zip(traj.clouds()) {
                for (x, y) in a.states().iter().zip(b.states()) {
                    assert_eq!(x.to_bits(), y.to_bits(), "threads={threads}");
                }
            }
        }
    }

    #[test]
    fn coupled_runs_share_paths() {
        let (spec, sampler) = brownian_setup();
        let noise = NoiseTable::new(5, 2, 1, 0.125, 8).unwrap();
        let engine = Engine::new(1).unwrap();
        let schemes = [
            SchemeConfig::new(SchemeKind::SplitStep, 0.25, 4),
            SchemeConfig::new(SchemeKind::SplitStep, 0.25, 4),
            SchemeConfig::new(SchemeKind::ExplicitEuler, 0.25, 4),
        ];
        let runs = engine
            .run_coupled(&spec, &schemes, 2, &sampler, &noise, &SnapshotPolicy::TerminalOnly)
            .unwrap();
        // Identical configs give identical trajectories; with v = 0 the
        // split-step and Euler coincide as well.
        assert_eq!(runs[0].terminal().states(), runs[1].terminal().states());
        assert_eq!(runs[0].terminal().states(), runs[2].terminal().states());
    }

    #[test]
    fn two_state_runs_share_noise() {
        let (spec, sampler) = brownian_setup();
        let sampler_z = InitialSampler::new(InitialLaw::Point(vec![7.0]), 0, 1).unwrap();
        let noise = NoiseTable::new(5, 4, 1, 0.125, 8).unwrap();
        let engine = Engine::new(1).unwrap();
        let scheme = SchemeConfig::new(SchemeKind::SplitStep, 0.125, 8);
        let (x, z) = engine
            .run_two_state(&spec, &scheme, 4, &sampler, &sampler_z, &noise, &SnapshotPolicy::EveryK(1))
            .unwrap();
        // Additive shared noise cancels in the difference at every time.
        for (cx, cz) in x.clouds().iter().zip(z.clouds()) {
            for i in 0..cx.len() {
                let gap = cx.states()[i] - cz.states()[i];
                assert!((gap - (2.0 - 7.0)).abs() < 1e-12, "gap {gap}");
            }
        }
        // Same sampler twice: zero difference for all time.
        let (x2, z2) = engine
            .run_two_state(&spec, &scheme, 4, &sampler, &sampler, &noise, &SnapshotPolicy::EveryK(1))
            .unwrap();
        for (cx, cz) in x2.clouds().iter().zip(z2.clouds()) {
            assert_eq!(cx.states(), cz.states());
        }
    }

    #[test]
    fn fourth_moment_stays_bounded_for_the_cubic_model() {
        let spec = make_builtin(
            BuiltinModel::GinzburgLandau,
            &Params::new().set("sigma_prime", 1.5).set("c", 0.5),
        )
        .unwrap();
        let sampler = InitialSampler::new(InitialLaw::Point(vec![1.0]), 1, 0).unwrap();
        let engine = Engine::new(2).unwrap();
        for (h, steps) in [(1e-2, 100usize), (1e-3, 1000usize)] {
            let noise = NoiseTable::new(1, 200, 1, h, steps as u64).unwrap();
            let scheme = SchemeConfig::new(SchemeKind::SplitStep, h, steps);
            let traj = engine
                .run(&spec, &scheme, 200, &sampler, &noise, &SnapshotPolicy::EveryK(1))
                .unwrap();
            let max_norm4 = traj
                .clouds()
                .iter()
                .map(|c| c.mean_norm4())
                .fold(0.0f64, f64::max);
            assert!(max_norm4 < 100.0, "h={h}: running max fourth moment {max_norm4}");
        }
    }

    #[test]
    fn cloud_construction_flags_non_finite_states() {
        let cloud = ParticleCloud::new(0.0, 2, vec![1.0, 2.0, f64::NAN, 0.0]).unwrap();
        assert_eq!(cloud.flags(), &[false, true]);
        assert_eq!(cloud.flagged(), 1);
        assert!(ParticleCloud::<f64>::new(0.0, 2, vec![1.0]).is_err());
    }
}

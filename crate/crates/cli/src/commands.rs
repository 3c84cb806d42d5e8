//! The experiment commands behind the CLI subcommands. Each takes a validated
//! configuration, runs the engine and writes CSV output; file contents except
//! wall-clock timings are byte-deterministic for a fixed seed.

use std::path::{Path, PathBuf};

use mvsde::analysis::{contractivity_series, strong_weak_errors, ErrorReport, PairErrors};
use mvsde::engine::Trajectory;
use mvsde::model::{empirical_stats, ModelSpec, StatDescriptor};
use mvsde::schemes::{SchemeConfig, SchemeKind};
use mvsde::SnapshotPolicy;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::csvfmt::{full, short, Csv};
use crate::{CliError, Result};

fn require_out(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.out
        .as_ref()
        .map(PathBuf::from)
        .ok_or_else(|| CliError::Config("no output path: set \"out\" in the config or pass --out".into()))
}

fn require_kind(cfg: &ExperimentConfig, kind: ExperimentKind) -> Result<()> {
    if cfg.experiment != kind {
        return Err(CliError::Config(format!(
            "config declares experiment \"{}\" but the \"{}\" subcommand was invoked",
            cfg.experiment.name(),
            kind.name()
        )));
    }
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, contents)?;
    Ok(())
}

/// Simulate one scheme and write the trajectory summary: per snapshot the
/// mean and second moment of every coordinate, the largest state magnitude
/// and the non-finite particle count.  Wall-clock timings go to a sidecar
/// file so the summary itself stays byte-deterministic.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<PathBuf> {
    require_kind(cfg, ExperimentKind::Run)?;
    let out = require_out(cfg)?;
    if cfg.schemes.len() != 1 {
        return Err(CliError::Config(format!(
            "run takes exactly one scheme, got {}",
            cfg.schemes.len()
        )));
    }
    let spec = cfg.build_model()?;
    let engine = cfg.build_engine()?;
    let schemes = cfg.build_schemes()?;
    let scheme = &schemes[0];
    let h_fine = cfg.fine_resolution(&[scheme.h], cfg.has_adaptive())?;
    let noise = cfg.build_noise(&spec, h_fine)?;
    let sampler = cfg.build_initial(&cfg.initial, spec.dim, 0)?;
    let trajectory = engine.run(&spec, scheme, cfg.n, &sampler, &noise, &cfg.snapshot_policy())?;

    let mut csv = Csv::new();
    csv.comment(&format!("model={} scheme={} n={} t={} h={} h_fine={h_fine} seed={}",
        spec.name, scheme.label(), cfg.n, cfg.t, scheme.h, cfg.seed));
    let mut header = vec!["t".to_string()];
    for j in 0..spec.dim {
        header.push(format!("mean_{j}"));
    }
    for j in 0..spec.dim {
        header.push(format!("m2_{j}"));
    }
    header.push("max_abs".into());
    header.push("nonfinite".into());
    csv.row(header.iter().map(|s| s.as_str()));
    for cloud in trajectory.clouds() {
        let stats = empirical_stats(cloud, &StatDescriptor::default())?;
        let mut cells = vec![full(cloud.time())];
        cells.extend(stats.mean.iter().map(|m| full(*m)));
        cells.extend(stats.second_moment.iter().map(|m| full(*m)));
        cells.push(full(cloud.max_abs_state()));
        cells.push(cloud.flagged().to_string());
        csv.row(cells);
    }
    write_file(&out, &csv.finish())?;

    let mut timing = Csv::new();
    timing.comment(&format!("total_s={}", short(trajectory.total_seconds())));
    timing.row(["step", "seconds"]);
    for (n, s) in trajectory.step_seconds().iter().enumerate() {
        timing.row([n.to_string(), short(*s)]);
    }
    write_file(&timing_path(&out), &timing.finish())?;
    Ok(out)
}

pub fn timing_path(out: &Path) -> PathBuf {
    out.with_extension("timing.csv")
}

/// Strong/weak terminal errors of every configured scheme over the step grid
/// against a fine split-step reference, all on shared Brownian paths, plus
/// fitted log-log rates.
pub fn cmd_convergence(cfg: &ExperimentConfig) -> Result<PathBuf> {
    require_kind(cfg, ExperimentKind::Convergence)?;
    let out = require_out(cfg)?;
    let grid = cfg
        .h_grid
        .as_ref()
        .ok_or_else(|| CliError::Config("convergence needs h_grid".into()))?;
    if grid.len() < 3 {
        return Err(CliError::Config("convergence needs at least three grid steps".into()));
    }
    let mut grid = grid.clone();
    grid.sort_by(f64::total_cmp);
    if grid.windows(2).any(|w| w[0] == w[1]) {
        return Err(CliError::Config("h_grid entries must be distinct".into()));
    }
    if cfg.schemes.iter().any(|s| s.h.is_some()) {
        return Err(CliError::Config(
            "in a convergence study the step comes from h_grid; drop per-scheme h".into(),
        ));
    }
    let spec = cfg.build_model()?;
    let coord = check_coord(cfg, &spec)?;
    let engine = cfg.build_engine()?;
    let h_min = grid[0];
    let h_ref = h_min / 8.0;
    // Default fine resolution min(h)/64 = h_ref/8; validate every grid step
    // and the reference against it.
    let mut all_steps = grid.clone();
    all_steps.push(h_ref);
    let h_fine = {
        let mut check = cfg.clone();
        check.h_fine = Some(cfg.h_fine.unwrap_or(h_min / 64.0));
        check.fine_resolution(&all_steps, true)?
    };
    let noise = cfg.build_noise(&spec, h_fine)?;
    let sampler = cfg.build_initial(&cfg.initial, spec.dim, 0)?;

    let reference_kind = if spec.v.needs_measure() {
        SchemeKind::FrozenMeasureSplitStep
    } else {
        SchemeKind::SplitStep
    };
    let reference = SchemeConfig::new(reference_kind, h_ref, cfg.steps_for(h_ref)?);
    let mut runs: Vec<SchemeConfig<f64>> = vec![reference];
    let kinds: Vec<(String, SchemeKind<f64>)> = cfg
        .schemes
        .iter()
        .map(|s| ExperimentConfig::build_kind(s).map(|k| (k.label(), k)))
        .collect::<Result<_>>()?;
    for (_, kind) in &kinds {
        for &h in &grid {
            runs.push(SchemeConfig::new(*kind, h, cfg.steps_for(h)?));
        }
    }
    let trajectories =
        engine.run_coupled(&spec, &runs, cfg.n, &sampler, &noise, &SnapshotPolicy::TerminalOnly)?;
    let reference_run = &trajectories[0];

    let mut csv = Csv::new();
    csv.comment(&format!(
        "model={} n={} t={} coord={coord} seed={}",
        spec.name, cfg.n, cfg.t, cfg.seed
    ));
    csv.comment(&format!("reference={} h_ref={} h_fine={h_fine}", runs[0].label(), h_ref));
    csv.row(["scheme", "h", "eps1", "eps2", "slope_weak", "slope_strong"]);
    for (k, (label, _)) in kinds.iter().enumerate() {
        let base = 1 + k * grid.len();
        let pairs: Vec<PairErrors<f64>> = (0..grid.len())
            .map(|g| strong_weak_errors(&trajectories[base + g], reference_run, coord))
            .collect::<std::result::Result<_, _>>()?;
        let report = ErrorReport::from_errors(
            label.clone(),
            format!("{} h_ref={h_ref}", runs[0].label()),
            grid.clone(),
            pairs,
        );
        for g in 0..report.h_grid.len() {
            csv.row([
                label.clone(),
                full(report.h_grid[g]),
                full(report.weak[g]),
                full(report.strong[g]),
                String::new(),
                String::new(),
            ]);
        }
        let slope_weak = report.slope_weak.map(|f| full(f.slope)).unwrap_or_default();
        let slope_strong = report.slope_strong.map(|f| full(f.slope)).unwrap_or_default();
        csv.row([
            label.clone(),
            String::new(),
            String::new(),
            String::new(),
            slope_weak,
            slope_strong,
        ]);
    }
    write_file(&out, &csv.finish())?;
    Ok(out)
}

fn check_coord(cfg: &ExperimentConfig, spec: &ModelSpec<f64>) -> Result<usize> {
    let coord = cfg.error_coord.unwrap_or(0);
    if coord >= spec.dim {
        return Err(CliError::Config(format!(
            "error_coord {coord} out of range for model dimension {}",
            spec.dim
        )));
    }
    Ok(coord)
}

/// Mean-square gap of two runs with shared noise and different initial laws,
/// against the geometric envelope of the growth-rate diagnosis.
pub fn cmd_stability(cfg: &ExperimentConfig) -> Result<PathBuf> {
    require_kind(cfg, ExperimentKind::Stability)?;
    let out = require_out(cfg)?;
    if cfg.schemes.len() != 1 {
        return Err(CliError::Config("stability takes exactly one scheme".into()));
    }
    let spec = cfg.build_model()?;
    let engine = cfg.build_engine()?;
    let schemes = cfg.build_schemes()?;
    let scheme = &schemes[0];
    if !scheme.kind.is_split_step() {
        return Err(CliError::Config(
            "stability experiments drive the split-step scheme (ssm or frozen_ssm)".into(),
        ));
    }
    let initial_z = cfg
        .initial_z
        .as_ref()
        .ok_or_else(|| CliError::Config("stability needs initial_z".into()))?;
    let h_fine = cfg.fine_resolution(&[scheme.h], false)?;
    let noise = cfg.build_noise(&spec, h_fine)?;
    let sampler_x = cfg.build_initial(&cfg.initial, spec.dim, 0)?;
    let sampler_z = cfg.build_initial(initial_z, spec.dim, 1)?;
    // The gap series needs every grid point.
    let (x, z) = engine.run_two_state(
        &spec,
        scheme,
        cfg.n,
        &sampler_x,
        &sampler_z,
        &noise,
        &SnapshotPolicy::EveryK(1),
    )?;
    let report = contractivity_series(&x, &z, &spec.constants, scheme.h)?;

    let mut csv = Csv::new();
    csv.comment(&format!(
        "model={} scheme={} n={} t={} h={} seed={}",
        spec.name, scheme.label(), cfg.n, cfg.t, scheme.h, cfg.seed
    ));
    csv.comment(&format!("beta={}", full(report.beta)));
    csv.comment(&format!("alpha={}", full(report.alpha)));
    csv.comment(&format!(
        "h_max={}",
        report.h_max.map(full).unwrap_or_else(|| "none".into())
    ));
    csv.comment(&format!("contractive={}", report.contractive));
    csv.row(["n", "t", "d_n", "envelope", "beta", "alpha"]);
    for (n, time) in report.times.iter().enumerate() {
        csv.row([
            n.to_string(),
            full(*time),
            full(report.gap[n]),
            full(report.envelope[n]),
            full(report.beta),
            full(report.alpha),
        ]);
    }
    write_file(&out, &csv.finish())?;
    Ok(out)
}

/// Wall-clock timing of each (scheme, thread-count) cell on identical
/// workloads. Timing cells vary run to run; the simulated states must not,
/// and the command verifies that before reporting.
pub fn cmd_bench(cfg: &ExperimentConfig) -> Result<PathBuf> {
    require_kind(cfg, ExperimentKind::Bench)?;
    let out = require_out(cfg)?;
    let spec = cfg.build_model()?;
    let schemes = cfg.build_schemes()?;
    let thread_grid = cfg.bench_threads.clone().unwrap_or_else(|| vec![1, 2, 4]);
    if thread_grid.is_empty() || thread_grid.contains(&0) {
        return Err(CliError::Config("bench_threads must list positive thread counts".into()));
    }
    let coarse: Vec<f64> = schemes.iter().map(|s| s.h).collect();
    let h_fine = cfg.fine_resolution(&coarse, cfg.has_adaptive())?;
    let noise = cfg.build_noise(&spec, h_fine)?;
    let sampler = cfg.build_initial(&cfg.initial, spec.dim, 0)?;

    let mut csv = Csv::new();
    csv.comment(&format!("model={} n={} t={} seed={}", spec.name, cfg.n, cfg.t, cfg.seed));
    csv.row(["scheme", "n", "threads", "total_s", "per_step_ms"]);
    let mut identical = true;
    for scheme in &schemes {
        let mut baseline: Option<Trajectory<f64>> = None;
        for &threads in &thread_grid {
            let mut engine = mvsde::Engine::new(threads)?;
            if let Some(chunk) = cfg.chunk_size {
                engine = engine.with_chunk_size(chunk)?;
            }
            let trajectory = engine.run(
                &spec,
                scheme,
                cfg.n,
                &sampler,
                &noise,
                &SnapshotPolicy::TerminalOnly,
            )?;
            let total = trajectory.total_seconds();
            let per_step_ms = 1000.0 * total / scheme.steps as f64;
            csv.row([
                scheme.label(),
                cfg.n.to_string(),
                threads.to_string(),
                short(total),
                short(per_step_ms),
            ]);
            match &baseline {
                None => baseline = Some(trajectory),
                Some(reference) => {
                    if reference.terminal().states() != trajectory.terminal().states() {
                        identical = false;
                    }
                }
            }
        }
    }
    csv.comment(&format!("states_identical_across_threads={identical}"));
    write_file(&out, &csv.finish())?;
    if !identical {
        return Err(CliError::Numerical(
            "bench cells disagreed across thread counts; determinism contract broken".into(),
        ));
    }
    Ok(out)
}

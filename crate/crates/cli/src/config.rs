//! JSON experiment configuration: schema, validation and construction of the
//! core objects (model, samplers, engine, noise table).
//!
//! All cross-field constraints are checked before any simulation starts:
//! grids must tile the horizon, coarse steps must sit on the fine grid, and
//! each scheme entry must carry exactly the parameters its kind needs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use mvsde::builtin::{make_builtin, BuiltinModel, Params};
use mvsde::implicit::SolveSettings;
use mvsde::model::ModelSpec;
use mvsde::noise::{InitialLaw, InitialSampler, NoiseTable};
use mvsde::schemes::{AdaptiveRule, SchemeConfig, SchemeKind};
use mvsde::{Engine, SnapshotPolicy};

use crate::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Run,
    Convergence,
    Stability,
    Bench,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Run => "run",
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::Stability => "stability",
            ExperimentKind::Bench => "bench",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    /// Free-form note, carried through untouched (sample configs mark
    /// user-editable parameter blocks this way).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSection {
    Point {
        value: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed_offset: Option<u64>,
    },
    Normal {
        mean: Vec<f64>,
        std: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed_offset: Option<u64>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HDeltaSection {
    pub rule: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSection {
    pub scheme: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_delta: Option<HDeltaSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
pub enum SnapshotSection {
    Terminal,
    EveryK { k: usize },
    Times { times: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub model: ModelSection,
    pub initial: InitialSection,
    /// Second initial law for stability experiments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_z: Option<InitialSection>,
    pub schemes: Vec<SchemeSection>,
    pub n: usize,
    pub t: f64,
    /// Step grid for convergence studies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_grid: Option<Vec<f64>>,
    /// Finest Brownian resolution. Defaults: `min(h)/64` for convergence
    /// studies and for any run with an adaptive scheme, `min(h)` otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_fine: Option<f64>,
    pub seed: u64,
    #[serde(default = "default_threads")]
    pub threads: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot: Option<SnapshotSection>,
    /// Coordinate used for error metrics (multi-dimensional models).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_coord: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    /// Thread counts exercised by the bench experiment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bench_threads: Option<Vec<usize>>,
    /// Implicit-stage residual tolerance (absolute and relative).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_residual: Option<f64>,
    /// Implicit-stage iteration budget.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
}

fn default_threads() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))?;
        cfg.check_basics()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    fn check_basics(&self) -> Result<()> {
        if self.n == 0 {
            return Err(CliError::Config("n must be >= 1".into()));
        }
        if !(self.t > 0.0 && self.t.is_finite()) {
            return Err(CliError::Config(format!("t must be positive, got {}", self.t)));
        }
        if self.threads == 0 {
            return Err(CliError::Config("threads must be >= 1".into()));
        }
        if self.schemes.is_empty() {
            return Err(CliError::Config("at least one scheme is required".into()));
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<ModelSpec<f64>> {
        let model: BuiltinModel = self.model.name.parse()?;
        let mut params = Params::new();
        for (key, value) in &self.model.params {
            params.insert(key, *value);
        }
        Ok(make_builtin(model, &params)?)
    }

    pub fn build_engine(&self) -> Result<Engine<f64>> {
        let mut solve = SolveSettings::default();
        if let Some(tol) = self.tol_residual {
            if !(tol > 0.0) {
                return Err(CliError::Config("tol_residual must be positive".into()));
            }
            solve.tol_abs = tol;
            solve.tol_rel = tol;
        }
        if let Some(max_iter) = self.max_iter {
            solve.max_iter = max_iter;
        }
        let mut engine = Engine::new(self.threads)?.with_solve_settings(solve);
        if let Some(chunk) = self.chunk_size {
            engine = engine.with_chunk_size(chunk)?;
        }
        Ok(engine)
    }

    pub fn build_initial(
        &self,
        section: &InitialSection,
        dim: usize,
        default_offset: u64,
    ) -> Result<InitialSampler<f64>> {
        let (law, offset) = match section {
            InitialSection::Point { value, seed_offset } => {
                (InitialLaw::Point(value.clone()), seed_offset.unwrap_or(default_offset))
            }
            InitialSection::Normal { mean, std, seed_offset } => (
                InitialLaw::Normal { mean: mean.clone(), std: std.clone() },
                seed_offset.unwrap_or(default_offset),
            ),
        };
        if law.dim() != dim {
            return Err(CliError::Config(format!(
                "initial law has dimension {}, model has {dim}",
                law.dim()
            )));
        }
        Ok(InitialSampler::new(law, self.seed, offset)?)
    }

    pub fn snapshot_policy(&self) -> SnapshotPolicy<f64> {
        match &self.snapshot {
            None | Some(SnapshotSection::Terminal) => SnapshotPolicy::TerminalOnly,
            Some(SnapshotSection::EveryK { k }) => SnapshotPolicy::EveryK(*k),
            Some(SnapshotSection::Times { times }) => SnapshotPolicy::Times(times.clone()),
        }
    }

    /// The scheme kind of one entry, with strict parameter checking.
    pub fn build_kind(section: &SchemeSection) -> Result<SchemeKind<f64>> {
        let reject_alpha = || -> Result<()> {
            if section.alpha.is_some() {
                return Err(CliError::Config(format!(
                    "scheme \"{}\" takes no alpha",
                    section.scheme
                )));
            }
            Ok(())
        };
        let reject_h_delta = || -> Result<()> {
            if section.h_delta.is_some() {
                return Err(CliError::Config(format!(
                    "scheme \"{}\" takes no h_delta",
                    section.scheme
                )));
            }
            Ok(())
        };
        match section.scheme.as_str() {
            "ssm" => {
                reject_alpha()?;
                reject_h_delta()?;
                Ok(SchemeKind::SplitStep)
            }
            "frozen_ssm" => {
                reject_alpha()?;
                reject_h_delta()?;
                Ok(SchemeKind::FrozenMeasureSplitStep)
            }
            "euler" => {
                reject_alpha()?;
                reject_h_delta()?;
                Ok(SchemeKind::ExplicitEuler)
            }
            "tamed" => {
                reject_h_delta()?;
                let alpha = section
                    .alpha
                    .ok_or_else(|| CliError::Config("tamed scheme needs alpha".into()))?;
                Ok(SchemeKind::Tamed { alpha })
            }
            "adaptive" => {
                reject_alpha()?;
                let rule = section
                    .h_delta
                    .as_ref()
                    .ok_or_else(|| CliError::Config("adaptive scheme needs h_delta.rule".into()))?;
                let rule = match rule.rule.as_str() {
                    "inv_sq" => AdaptiveRule::InverseSquare,
                    "drift_ratio" => AdaptiveRule::DriftRatio,
                    other => {
                        return Err(CliError::Config(format!(
                            "unknown h_delta rule \"{other}\" (known: inv_sq, drift_ratio)"
                        )))
                    }
                };
                Ok(SchemeKind::Adaptive { rule })
            }
            other => Err(CliError::Config(format!(
                "unknown scheme \"{other}\" (known: ssm, frozen_ssm, tamed, adaptive, euler)"
            ))),
        }
    }

    /// Steps so that `steps * h = t` within 1 ulp-scale tolerance.
    pub fn steps_for(&self, h: f64) -> Result<usize> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(CliError::Config(format!("h must be positive, got {h}")));
        }
        let steps = (self.t / h).round();
        if steps < 1.0 || (steps * h - self.t).abs() > 1e-9 * self.t {
            return Err(CliError::Config(format!(
                "step {h} does not tile the horizon t={}",
                self.t
            )));
        }
        Ok(steps as usize)
    }

    /// Scheme configs for experiments where every entry carries its own `h`.
    pub fn build_schemes(&self) -> Result<Vec<SchemeConfig<f64>>> {
        self.schemes
            .iter()
            .map(|section| {
                let kind = Self::build_kind(section)?;
                let h = section.h.ok_or_else(|| {
                    CliError::Config(format!("scheme \"{}\" needs h", section.scheme))
                })?;
                Ok(SchemeConfig::new(kind, h, self.steps_for(h)?))
            })
            .collect()
    }

    /// Effective fine resolution for a set of coarse steps: the configured
    /// value, or `min(h)/64` when refinement is needed (convergence studies,
    /// adaptive schemes), or `min(h)` otherwise.
    pub fn fine_resolution(&self, coarse_steps: &[f64], needs_refinement: bool) -> Result<f64> {
        let h_min = coarse_steps.iter().copied().fold(f64::INFINITY, f64::min);
        let h_fine = match self.h_fine {
            Some(value) => {
                if !(value > 0.0 && value.is_finite()) {
                    return Err(CliError::Config("h_fine must be positive".into()));
                }
                value
            }
            None if needs_refinement => h_min / 64.0,
            None => h_min,
        };
        for &h in coarse_steps {
            let m = (h / h_fine).round();
            if m < 1.0 || (h - m * h_fine).abs() > 1e-9 * h {
                return Err(CliError::Config(format!(
                    "coarse step {h} is not an integer multiple of h_fine={h_fine}"
                )));
            }
        }
        Ok(h_fine)
    }

    /// Noise table over the full horizon at resolution `h_fine`.
    pub fn build_noise(&self, spec: &ModelSpec<f64>, h_fine: f64) -> Result<NoiseTable<f64>> {
        let fine_steps = (self.t / h_fine).round();
        if (fine_steps * h_fine - self.t).abs() > 1e-9 * self.t {
            return Err(CliError::Config(format!(
                "h_fine={h_fine} does not tile the horizon t={}",
                self.t
            )));
        }
        Ok(NoiseTable::new(self.seed, self.n, spec.noise_dim, h_fine, fine_steps as u64)?)
    }

    /// Whether any configured scheme substeps below the coarse grid.
    pub fn has_adaptive(&self) -> bool {
        self.schemes.iter().any(|s| s.scheme == "adaptive")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SAMPLE: &str = r#"{
  "experiment": "run",
  "model": { "name": "ginzburg_landau", "params": { "sigma_prime": 1.5, "c": 0.5 } },
  "initial": { "kind": "point", "value": [1.0] },
  "schemes": [ { "scheme": "ssm", "h": 0.01 } ],
  "n": 100,
  "t": 1.0,
  "seed": 42,
  "threads": 1,
  "snapshot": { "policy": "every_k", "k": 10 },
  "out": "run.csv"
}"#;

    #[test]
    fn round_trip_is_idempotent() {
        let cfg = ExperimentConfig::from_json_str(SAMPLE).unwrap();
        let json1 = cfg.to_json();
        let cfg2 = ExperimentConfig::from_json_str(&json1).unwrap();
        let json2 = cfg2.to_json();
        assert_eq!(json1, json2);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let bad = SAMPLE.replace("\"seed\": 42", "\"seed\": 42, \"sneed\": 1");
        assert!(ExperimentConfig::from_json_str(&bad).is_err());
    }

    #[test]
    fn scheme_parameter_checks() {
        let tamed = SchemeSection {
            scheme: "tamed".into(),
            h: Some(0.01),
            alpha: None,
            h_delta: None,
        };
        assert!(ExperimentConfig::build_kind(&tamed).is_err());
        let adaptive_bad_rule = SchemeSection {
            scheme: "adaptive".into(),
            h: Some(0.01),
            alpha: None,
            h_delta: Some(HDeltaSection { rule: "wild".into() }),
        };
        assert!(ExperimentConfig::build_kind(&adaptive_bad_rule).is_err());
        let ssm_with_alpha = SchemeSection {
            scheme: "ssm".into(),
            h: Some(0.01),
            alpha: Some(0.5),
            h_delta: None,
        };
        assert!(ExperimentConfig::build_kind(&ssm_with_alpha).is_err());
    }

    #[test]
    fn grid_alignment_checks() {
        let cfg = ExperimentConfig::from_json_str(SAMPLE).unwrap();
        assert_eq!(cfg.steps_for(0.01).unwrap(), 100);
        assert!(cfg.steps_for(0.3).is_err());
        assert_eq!(cfg.fine_resolution(&[0.01], false).unwrap(), 0.01);
        assert_eq!(cfg.fine_resolution(&[0.01, 0.02], true).unwrap(), 0.01 / 64.0);
        assert!(cfg.fine_resolution(&[0.01, 0.0003], false).is_err());
    }
}

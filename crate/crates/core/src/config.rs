//! Experiment configuration files.

use crate::arch::{McmVars, TechParams, H100_TFLOPS};
use crate::opt::{ArchBounds, ClusterKind, EvalOptions, InnerConfig};
use crate::workload::{ModelConfig, ParallelStrategy};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Environment variable that overrides `output_dir`.
pub const OUT_DIR_ENV: &str = "CHIPNET_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Evaluate,
    Traffic,
    Sweep,
    Optimize,
    Baselines,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::Evaluate => "evaluate",
            Mode::Traffic => "traffic",
            Mode::Sweep => "sweep",
            Mode::Optimize => "optimize",
            Mode::Baselines => "baselines",
        }
    }
}

/// Package design plus total cluster compute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    /// TFLOPS.
    pub compute_total: f64,
    pub n: u64,
    pub x: u64,
    pub y: u64,
    pub m: u64,
    pub o: u64,
    pub r: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            compute_total: 1024.0 * H100_TFLOPS,
            n: 128,
            x: 2,
            y: 4,
            m: 6,
            o: 4,
            r: 0.5,
        }
    }
}

impl ArchConfig {
    pub fn vars(&self) -> McmVars {
        McmVars {
            n: self.n,
            x: self.x,
            y: self.y,
            m: self.m,
            o: self.o,
            r: self.r,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub outer_budget: usize,
    pub total_budget: usize,
    pub inner: InnerConfig,
    pub bounds: ArchBounds,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            outer_budget: 8,
            total_budget: 512,
            inner: InnerConfig::default(),
            bounds: ArchBounds::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    /// Total compute in TFLOPS, MCM count scaled to keep the die size.
    ComputeTotal,
    N,
    X,
    Y,
    M,
    O,
    /// CPO edge ratio; `o` follows as the most ports the ratio allows.
    R,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselinesConfig {
    /// Cluster sizes in H100-equivalent dies.
    pub dies: Vec<u64>,
    pub kinds: Vec<ClusterKind>,
    /// Also evaluate ChipLight with link reuse disabled.
    pub no_reuse_row: bool,
}

impl Default for BaselinesConfig {
    fn default() -> Self {
        BaselinesConfig {
            dies: vec![64, 256, 1024, 4096],
            kinds: ClusterKind::ALL.to_vec(),
            no_reuse_row: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub tech: TechParams,
    #[serde(default)]
    pub eval: EvalOptions,
    #[serde(default)]
    pub arch: ArchConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<ParallelStrategy>,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub baselines: BaselinesConfig,
}

fn default_seed() -> u64 {
    1
}

fn default_out() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid `{field}`: {message}")]
    Validation { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Validation {
        field: field.to_string(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    pub fn new(mode: Mode) -> Self {
        ExperimentConfig {
            mode,
            seed: default_seed(),
            output_dir: default_out(),
            model: ModelConfig::default(),
            tech: TechParams::default(),
            eval: EvalOptions::default(),
            arch: ArchConfig::default(),
            strategy: matches!(mode, Mode::Evaluate | Mode::Traffic).then(default_strategy),
            search: SearchConfig::default(),
            sweep: (mode == Mode::Sweep).then(|| SweepConfig {
                variable: SweepVariable::M,
                values: vec![2.0, 4.0, 6.0, 8.0, 10.0, 12.0],
            }),
            baselines: BaselinesConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map_or(0, |s| text[..s.start.min(text.len())].lines().count().max(1));
            ConfigError::Parse {
                line,
                message: e.message().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// Resolved configuration as TOML; parses back to `self`.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.check().map_err(|m| invalid("model", m))?;
        self.tech.check().map_err(|m| invalid("tech", m))?;
        if self.seed > i64::MAX as u64 {
            return Err(invalid("seed", "must fit in a signed 64-bit integer"));
        }
        if !(self.eval.sim.efficiency > 0.0 && self.eval.sim.efficiency <= 1.0) {
            return Err(invalid("eval.sim.efficiency", "must lie in (0, 1]"));
        }
        if !(self.arch.compute_total > 0.0) {
            return Err(invalid("arch.compute_total", "must be positive"));
        }
        if self.search.inner.budget == 0 {
            return Err(invalid("search.inner.budget", "must be >= 1"));
        }
        match self.mode {
            Mode::Evaluate | Mode::Traffic if self.strategy.is_none() => {
                return Err(invalid("strategy", format!("required in {} mode", self.mode.label())));
            }
            Mode::Sweep => match &self.sweep {
                None => return Err(invalid("sweep", "required in sweep mode")),
                Some(s) if s.values.is_empty() => return Err(invalid("sweep.values", "must not be empty")),
                _ => {}
            },
            Mode::Baselines if self.baselines.dies.is_empty() || self.baselines.kinds.is_empty() => {
                return Err(invalid("baselines", "dies and kinds must not be empty"));
            }
            _ => {}
        }
        Ok(())
    }
}

/// Fits the default model on the default 1024-die arch.
fn default_strategy() -> ParallelStrategy {
    ParallelStrategy {
        tp: 4,
        cp: 2,
        pp: 1,
        dp: 128,
        ep: 32,
        num_microbatches: 2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
mode = "traffic"

[strategy]
tp = 8
cp = 4
pp = 2
dp = 16
ep = 8
num_microbatches = 8
"#;

    #[test]
    fn minimal_resolves_defaults() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.tech, TechParams::default());
        assert_eq!(c.model, ModelConfig::default());
        assert_eq!(c.seed, 1);
        assert_eq!(c.mode, Mode::Traffic);
    }

    #[test]
    fn unknown_field_is_named() {
        let text = format!("{MINIMAL}\n[tech]\nwarp_drive = 3\n");
        match ExperimentConfig::from_toml(&text) {
            Err(ConfigError::Parse { line, message }) => {
                assert!(message.contains("warp_drive"), "{message}");
                assert!(line >= 12, "{line}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_strategy_is_named() {
        match ExperimentConfig::from_toml("mode = \"evaluate\"\n") {
            Err(ConfigError::Validation { field, .. }) => assert_eq!(field, "strategy"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn echo_round_trips() {
        let mut c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        c.sweep = Some(SweepConfig {
            variable: SweepVariable::R,
            values: vec![0.2, 0.3, 1.0 / 3.0],
        });
        c.tech.compute_density = 989.0 / 814.0;
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn sweep_needs_values() {
        let text = "mode = \"sweep\"\n[sweep]\nvariable = \"m\"\nvalues = []\n";
        match ExperimentConfig::from_toml(text) {
            Err(ConfigError::Validation { field, .. }) => assert_eq!(field, "sweep.values"),
            other => panic!("{other:?}"),
        }
    }
}

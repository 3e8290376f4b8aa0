use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::{default_pilot_template, synth_environment, EnvironmentGrid, SYNTH_KINDS};
use crate::error::{Error, Result};
use crate::kernels::{KernelConfig, KernelRegistry};
use crate::planning::{StrategyConfig, StrategyRegistry};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// A synthetic kind, or `file` to load `path`.
    pub kind: String,
    pub path: Option<PathBuf>,
    /// Bézier control points in unit-square coordinates.
    pub pilot_template: Vec<[f64; 2]>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            kind: "ridge2d".into(),
            path: None,
            pilot_template: default_pilot_template(),
        }
    }
}

impl EnvConfig {
    pub fn load(&self) -> Result<EnvironmentGrid> {
        match (self.kind.as_str(), &self.path) {
            ("file", Some(path)) => EnvironmentGrid::load(path),
            ("file", None) => Err(Error::Config("env.kind = \"file\" needs env.path".into())),
            (kind, _) => synth_environment(kind),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Mapping,
    Overfit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub mode: Mode,
    pub seed: u64,
    /// Number of consecutive seeds starting at `seed` for multi-run commands.
    pub seeds: usize,
    pub n_max: usize,
    pub pilot: usize,
    /// Optimizer steps after the pilot survey.
    pub burn_in: usize,
    pub resolution: usize,
    /// Initial observation noise scale, standardized units.
    pub noise: f64,
    pub lr_hyper: f64,
    pub lr_net: f64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            mode: Mode::Mapping,
            seed: 0,
            seeds: 5,
            n_max: 300,
            pilot: 50,
            burn_in: 50,
            resolution: 50,
            noise: 1.0,
            lr_hyper: crate::gp::HYPER_LR,
            lr_net: crate::gp::NET_LR,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OverfitSection {
    pub n_train: usize,
    pub iters: usize,
    pub resolution: usize,
    /// Metrics are recorded every this many optimizer steps.
    pub record_every: usize,
}

impl Default for OverfitSection {
    fn default() -> Self {
        OverfitSection {
            n_train: 600,
            iters: 2000,
            resolution: 100,
            record_every: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// One of `num_bases`, `hidden`, `lmin`, `lmax`.
    pub parameter: String,
    pub values: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            parameter: "num_bases".into(),
            values: vec![2.0, 5.0, 10.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub kernels: Vec<String>,
    pub strategies: Vec<String>,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection {
            kernels: vec!["rbf".into(), "ak".into(), "gibbs".into(), "dkl".into()],
            strategies: vec!["random".into(), "active".into(), "myopic".into()],
        }
    }
}

/// Everything needed to reproduce a run, one TOML table per module.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub kernel: KernelConfig,
    pub strategy: StrategyConfig,
    pub experiment: ExperimentSection,
    pub overfit: OverfitSection,
    pub sweep: SweepSection,
    pub bench: BenchSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies a `section.key=value` override. The value is read as a TOML
    /// literal, falling back to a bare string.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        let (section, field) = key
            .trim()
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("override key `{key}` is not section.field")))?;
        let raw = raw.trim();
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));

        let mut root = toml::Table::try_from(&*self).expect("config serializes");
        let table = root
            .get_mut(section)
            .and_then(toml::Value::as_table_mut)
            .ok_or_else(|| Error::Config(format!("unknown config section `{section}`")))?;
        let value = match (table.get(field), value) {
            (Some(toml::Value::Float(_)), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
            (Some(toml::Value::String(_)), v @ (toml::Value::Integer(_) | toml::Value::Float(_) | toml::Value::Boolean(_))) => {
                toml::Value::String(v.to_string())
            }
            (_, v) => v,
        };
        table.insert(field.to_string(), value);
        *self = root
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("override `{assignment}`: {}", e.message())))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        let kernels = KernelRegistry::default();
        if !kernels.contains(&self.kernel.name) {
            return Err(Error::UnknownKind {
                what: "kernel",
                name: self.kernel.name.clone(),
            });
        }
        StrategyRegistry::default().build(&self.strategy)?;
        if self.env.kind != "file" && !SYNTH_KINDS.contains(&self.env.kind.as_str()) {
            return Err(Error::UnknownKind {
                what: "environment",
                name: self.env.kind.clone(),
            });
        }
        if self.env.pilot_template.is_empty() {
            return Err(Error::Config("env.pilot_template is empty".into()));
        }
        let e = &self.experiment;
        if e.pilot < 2 {
            return Err(Error::Config(format!("experiment.pilot must be at least 2, got {}", e.pilot)));
        }
        if e.n_max < e.pilot {
            return Err(Error::Config(format!(
                "experiment.n_max ({}) is below the pilot count ({})",
                e.n_max, e.pilot
            )));
        }
        if e.resolution < 2 || self.overfit.resolution < 2 {
            return Err(Error::Config("grid resolution must be at least 2".into()));
        }
        if e.seeds == 0 {
            return Err(Error::Config("experiment.seeds must be at least 1".into()));
        }
        if !(e.noise > 0.0 && e.lr_hyper > 0.0 && e.lr_net >= 0.0) {
            return Err(Error::Config("noise and learning rates must be positive".into()));
        }
        if self.overfit.record_every == 0 || self.overfit.n_train < 2 {
            return Err(Error::Config("overfit needs record_every ≥ 1 and n_train ≥ 2".into()));
        }
        Ok(())
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.experiment.seeds as u64)
            .map(|i| self.experiment.seed + i)
            .collect()
    }
}

//! Experiment configuration files.

use std::fs;
use std::path::{Path, PathBuf};

use privmap::{
    DistortionBudget, InputSignal, IntegrationConfig, LtiSystem, Pipeline, QuantizerSpec,
    RectQuantizer, SolverConfig, SystemSpec,
};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// The reactor study as shipped in `configs/reactor.json`.
pub const REACTOR_CONFIG: &str = include_str!("../../../configs/reactor.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// JSON system definition, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemSpec>,
    pub sensor_quantizer: QuantizerSpec,
    pub private_quantizer: QuantizerSpec,
    pub n_v: usize,
    pub horizon: usize,
    pub epsilons: Vec<DistortionBudget>,
    /// First and last window, inclusive.
    pub k_range: [usize; 2],
    pub input: InputSignal,
    #[serde(default)]
    pub seed: u64,
    /// Sample paths written by `receding`, seeded `seed, seed+1, ...`.
    #[serde(default)]
    pub trajectories: usize,
    #[serde(default)]
    pub integration: IntegrationConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
}

/// A parsed config together with the directory relative paths resolve against.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| {
            CliError::Config(format!("line {}, column {}: {e}", e.line(), e.column()))
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn reactor() -> Self {
        Self::from_json(REACTOR_CONFIG).expect("shipped reactor config parses")
    }

    /// Checks everything that can be checked without touching the filesystem.
    pub fn validate(&self) -> Result<(), CliError> {
        match (&self.system, &self.system_file) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config("give only one of `system` and `system_file`".into()))
            }
            (None, None) => return Err(CliError::Config("missing `system` or `system_file`".into())),
            _ => {}
        }
        if self.epsilons.is_empty() {
            return Err(CliError::Config("`epsilons` is empty".into()));
        }
        let [first, last] = self.k_range;
        if first == 0 || first > last {
            return Err(CliError::Config(format!("bad `k_range` [{first}, {last}]")));
        }
        Ok(())
    }

    pub fn windows(&self) -> Vec<usize> {
        (self.k_range[0]..=self.k_range[1]).collect()
    }

    pub fn system_spec(&self, base_dir: &Path) -> Result<SystemSpec, CliError> {
        if let Some(spec) = &self.system {
            return Ok(spec.clone());
        }
        let rel = self.system_file.as_ref().expect("validated");
        let path = base_dir.join(rel);
        let text = fs::read_to_string(&path)
            .map_err(|e| CliError::Config(format!("system file {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| {
            CliError::Config(format!(
                "system file {}: line {}, column {}: {e}",
                path.display(),
                e.line(),
                e.column()
            ))
        })
    }

    pub fn pipeline(&self, base_dir: &Path) -> Result<Pipeline, CliError> {
        self.validate()?;
        let system = LtiSystem::from_spec(&self.system_spec(base_dir)?)?;
        Ok(Pipeline::new(
            system,
            RectQuantizer::from_spec(&self.sensor_quantizer)?,
            RectQuantizer::from_spec(&self.private_quantizer)?,
            self.horizon,
            self.n_v,
            self.input.clone(),
            self.integration,
            self.solver,
        )?)
    }
}

impl LoadedConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let config = ExperimentConfig::from_json(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        config.validate()?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if let Some(rel) = &config.system_file {
            let p = base_dir.join(rel);
            if !p.is_file() {
                return Err(CliError::Config(format!("system file {} not found", p.display())));
            }
        }
        Ok(Self { config, base_dir })
    }

    pub fn reactor() -> Self {
        Self {
            config: ExperimentConfig::reactor(),
            base_dir: PathBuf::from("."),
        }
    }

    pub fn pipeline(&self) -> Result<Pipeline, CliError> {
        self.config.pipeline(&self.base_dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reactor_config_round_trips() {
        let c = ExperimentConfig::reactor();
        assert_eq!(ExperimentConfig::from_json(&c.to_json()).unwrap(), c);
        assert_eq!(c.epsilons.len(), 3);
        assert_eq!(c.windows().len(), 25);
    }

    #[test]
    fn reactor_config_matches_builtin_constants() {
        let p = LoadedConfig::reactor().pipeline().unwrap();
        assert_eq!(p.system(), &privmap::reactor::system());
        assert_eq!(p.sensor(), &privmap::reactor::sensor_quantizer());
        assert_eq!(p.private(), &privmap::reactor::private_quantizer());
        assert_eq!(p.n_v(), privmap::reactor::NOISE_ALPHABET);
        assert_eq!(p.horizon(), privmap::reactor::HORIZON);
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = ExperimentConfig::from_json("{\n  \"n_v\": 5,\n  oops\n}").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(REACTOR_CONFIG).unwrap();
        v["n_w"] = 3.into();
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn empty_epsilons_are_rejected() {
        let mut c = ExperimentConfig::reactor();
        c.epsilons.clear();
        assert!(c.validate().is_err());
    }
}

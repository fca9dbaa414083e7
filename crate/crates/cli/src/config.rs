//! TOML configuration. Every section is optional and falls back to the
//! defaults of the standard synthetic experiment; unknown keys are rejected.

use std::path::Path;

use ntklab_core::experiments::{
    Figure1Config, GeneralizationConfig, InputRadius, SyntheticSpec, Target,
};
use ntklab_core::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub n: usize,
    pub d: usize,
    /// Target `y = (xᵀβ)^degree`.
    pub degree: u32,
    pub beta: Option<Vec<f64>>,
    pub normalize_labels: bool,
    pub input_radius: InputRadius,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            n: 100,
            d: 5,
            degree: 2,
            beta: None,
            normalize_labels: true,
            input_radius: InputRadius::Unit,
        }
    }
}

impl DataSection {
    pub fn spec(&self, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n: self.n,
            d: self.d,
            target: Target::Poly {
                degree: self.degree,
                beta: self.beta.clone(),
            },
            normalize_labels: self.normalize_labels,
            input_radius: self.input_radius,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub width: usize,
    pub init_scale: f64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            width: 1000,
            init_scale: 1.0,
        }
    }
}

/// A single training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSection,
    pub network: NetworkSection,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelCheckSection {
    pub d: usize,
    pub trials: usize,
    pub pairs_per_trial: usize,
    pub widths: Vec<usize>,
    /// Points in the dataset used for the empirical Gram comparison.
    pub n: usize,
    pub degree_cap: usize,
    pub series_cap: usize,
}

impl Default for KernelCheckSection {
    fn default() -> Self {
        Self {
            d: 5,
            trials: 5,
            pairs_per_trial: 200,
            widths: vec![1000, 10_000, 100_000],
            n: 20,
            degree_cap: 40,
            series_cap: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EigBoundsSection {
    pub n: usize,
    pub d: usize,
}

impl Default for EigBoundsSection {
    fn default() -> Self {
        Self { n: 100, d: 5 }
    }
}

/// Everything a config file may contain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: u64,
    pub threads: Option<usize>,
    pub data: DataSection,
    pub network: NetworkSection,
    pub train: TrainConfig,
    pub figure1: Figure1Config,
    pub generalize: GeneralizationConfig,
    pub kernel_check: KernelCheckSection,
    pub eig_bounds: EigBoundsSection,
}

impl ConfigFile {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            seed: self.seed,
            data: self.data.clone(),
            network: self.network.clone(),
            train: self.train.clone(),
        }
    }
}

/// Prefixes a core validation error with the config section it came from.
pub fn in_section(section: &str, e: ntklab_core::Error) -> CliError {
    match e {
        ntklab_core::Error::InvalidArgument { field, reason } => {
            CliError::Config(format!("invalid {section}.{field}: {reason}"))
        }
        other => other.into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = ConfigFile::parse("").unwrap();
        assert_eq!(c, ConfigFile::default());
        assert_eq!(c.train.step_size, 0.01);
        assert_eq!(c.data.n, 100);
    }

    #[test]
    fn sections_parse() {
        let c = ConfigFile::parse(
            "seed = 3\n[data]\nn = 20\ninput_radius = \"sqrt_d\"\n[train]\nstep_size = 0.5\nmode = \"fine-step-flow\"\n[figure1]\nwidths = [10, 20]\n",
        )
        .unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.data.n, 20);
        assert_eq!(c.data.input_radius, InputRadius::SqrtD);
        assert_eq!(c.train.step_size, 0.5);
        assert_eq!(c.figure1.widths, vec![10, 20]);
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let err = ConfigFile::parse("[train]\nstep_sise = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("step_sise"), "{err}");
        assert_eq!(err.exit_code(), 1);
        assert!(ConfigFile::parse("bogus = 1\n").is_err());
    }

    #[test]
    fn validation_errors_name_section_and_field() {
        let c = ConfigFile::parse("[train]\nstep_size = -0.1\n").unwrap();
        let err = in_section("train", c.train.validate().unwrap_err());
        assert!(err.to_string().contains("train.step_size"), "{err}");
    }
}

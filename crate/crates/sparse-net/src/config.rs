//! JSON run configuration for the command-line front end.
//!
//! Every section is optional and unknown keys are rejected. Defaults match
//! the library defaults; `docs/config.schema.json` documents the layout.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SyntheticConfig;
use crate::error::{Error, Result};
use crate::estimators::{Method, SelectConfig, DEFAULT_GRID};
use crate::net::{Activation, NetworkArch};
use crate::optimizer::OptConfig;
use crate::report::Format;

pub const SEED_ENV: &str = "SPARSE_NET_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MethodChoice {
    Gl,
    GlAgl,
    #[default]
    Both,
}

impl MethodChoice {
    pub fn methods(self) -> Vec<Method> {
        match self {
            MethodChoice::Gl => vec![Method::Gl],
            MethodChoice::GlAgl => vec![Method::GlAgl],
            MethodChoice::Both => vec![Method::Gl, Method::GlAgl],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            hidden: vec![20, 20, 20],
            activation: Activation::Tanh,
        }
    }
}

impl NetworkSection {
    pub fn arch(&self, n_inputs: usize) -> Result<NetworkArch> {
        let mut widths = vec![n_inputs];
        widths.extend(&self.hidden);
        widths.push(1);
        NetworkArch::new(widths, self.activation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub n_features: usize,
    pub n_significant: usize,
    pub n_samples: usize,
    pub noise_sd: f64,
    pub input_low: f64,
    pub input_high: f64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        SyntheticSection {
            n_features: 50,
            n_significant: 10,
            n_samples: 5000,
            noise_sd: 1.0,
            input_low: -1.0,
            input_high: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsvSection {
    pub path: Option<PathBuf>,
    pub response: Option<String>,
    pub add_noise: usize,
    /// `None` standardizes unless the file has a synthetic sidecar.
    pub standardize: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectSection {
    pub gamma: f64,
    pub lambda_grid: Vec<f64>,
    pub zeta_grid: Vec<f64>,
    pub n_splits: usize,
    pub test_fraction: f64,
}

impl Default for SelectSection {
    fn default() -> Self {
        let d = SelectConfig::default();
        SelectSection {
            gamma: d.gamma,
            lambda_grid: DEFAULT_GRID.to_vec(),
            zeta_grid: DEFAULT_GRID.to_vec(),
            n_splits: d.n_splits,
            test_fraction: d.test_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub metrics: Option<PathBuf>,
    pub frequencies: Option<PathBuf>,
    pub format: Option<Format>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub replicates: usize,
    pub method: MethodChoice,
    pub workers: usize,
    pub network: NetworkSection,
    pub synthetic: SyntheticSection,
    pub csv: CsvSection,
    pub opt: OptConfig,
    pub select: SelectSection,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            replicates: 1,
            method: MethodChoice::Both,
            workers: 1,
            network: NetworkSection::default(),
            synthetic: SyntheticSection::default(),
            csv: CsvSection::default(),
            opt: OptConfig::default(),
            select: SelectSection::default(),
            output: OutputSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::InvalidConfig(detail) => Error::Format {
                path: path.to_path_buf(),
                detail,
            },
            other => other,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::InvalidConfig("replicates must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::InvalidConfig("workers must be at least 1".into()));
        }
        self.network.arch(1)?;
        self.select_config(0).validate()?;
        self.synthetic_config(0)?.validate()
    }

    /// `--seed` flag, then the config file, then `SPARSE_NET_SEED`, then 0.
    pub fn resolve_seed(&self, flag: Option<u64>) -> Result<u64> {
        if let Some(s) = flag.or(self.seed) {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("{SEED_ENV}=`{v}` is not a seed"))),
            Err(_) => Ok(0),
        }
    }

    pub fn select_config(&self, seed: u64) -> SelectConfig {
        SelectConfig {
            gamma: self.select.gamma,
            lambda_grid: self.select.lambda_grid.clone(),
            zeta_grid: self.select.zeta_grid.clone(),
            n_splits: self.select.n_splits,
            test_fraction: self.select.test_fraction,
            opt: OptConfig {
                seed,
                ..self.opt.clone()
            },
            seed,
            workers: self.workers,
        }
    }

    pub fn synthetic_config(&self, seed: u64) -> Result<SyntheticConfig> {
        let s = &self.synthetic;
        Ok(SyntheticConfig {
            arch: self.network.arch(s.n_features)?,
            n_features: s.n_features,
            n_significant: s.n_significant,
            n_samples: s.n_samples,
            noise_sd: s.noise_sd,
            input_low: s.input_low,
            input_high: s.input_high,
            seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = RunConfig::from_json("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        let s = c.select_config(4);
        assert_eq!(s.lambda_grid, DEFAULT_GRID.to_vec());
        assert_eq!(s.opt.epochs, 20_000);
        assert_eq!(s.gamma, 2.0);
        assert_eq!(s.opt.seed, 4);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"epochs": 5}"#).is_err());
        assert!(RunConfig::from_json(r#"{"opt": {"epoch": 5}}"#).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::from_json(r#"{"select": {"lambda_grid": [1.0, 0.5]}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"synthetic": {"n_significant": 60}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"replicates": 0}"#).is_err());
    }

    #[test]
    fn nested_overrides() {
        let c = RunConfig::from_json(
            r#"{"network": {"hidden": [10, 10], "activation": "identity"},
                "opt": {"epochs": 7}, "method": "gl_agl", "seed": 9}"#,
        )
        .unwrap();
        assert_eq!(c.network.arch(3).unwrap().layer_widths, vec![3, 10, 10, 1]);
        assert_eq!(c.opt.epochs, 7);
        assert_eq!(c.method.methods(), vec![Method::GlAgl]);
        assert_eq!(c.resolve_seed(None).unwrap(), 9);
        assert_eq!(c.resolve_seed(Some(2)).unwrap(), 2);
    }
}

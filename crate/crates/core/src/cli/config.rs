//! Optional TOML configuration. Every key mirrors a command-line flag and
//! only fills in values the flags leave unset.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::solver::SolverConfig;

use super::SolverArgs;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub max_iters: Option<usize>,
    pub step: Option<f64>,
    pub tol: Option<f64>,
    pub accelerate: Option<bool>,
    pub seed: Option<u64>,
    pub k: Option<usize>,
    pub folds: Option<usize>,
    pub grid_points: Option<usize>,
    pub val_fraction: Option<f64>,
    pub out_dir: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e
                .span()
                .map_or(0, |s| text[..s.start].matches('\n').count() as u64 + 1),
            message: e.message().to_string(),
        })
    }

    pub fn from_args(args: &SolverArgs) -> Result<Self> {
        match &args.config {
            Some(path) => Self::load(path),
            None => Ok(Self::default()),
        }
    }

    pub fn solver(&self, args: &SolverArgs) -> Result<SolverConfig> {
        let defaults = SolverConfig::default();
        let config = SolverConfig {
            max_iters: args.max_iters.or(self.max_iters).unwrap_or(defaults.max_iters),
            initial_step: args.step.or(self.step).unwrap_or(defaults.initial_step),
            tol: args.tol.or(self.tol).unwrap_or(defaults.tol),
            seed: args.seed.or(self.seed).unwrap_or(defaults.seed),
            accelerate: if args.no_accelerate {
                false
            } else {
                self.accelerate.unwrap_or(defaults.accelerate)
            },
        };
        config.validate()?;
        Ok(config)
    }

    pub fn out_dir(&self, flag: &Option<PathBuf>) -> PathBuf {
        flag.clone()
            .or_else(|| self.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("."))
    }
}

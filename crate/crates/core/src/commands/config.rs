use std::path::Path;

use crate::error::{Error, Result};
use crate::solver::SolverConfig;

/// Reads a TOML solver configuration. Keys are the [`SolverConfig`] field
/// names, with loss weights under a `[weights]` table; anything omitted
/// keeps its default.
pub fn load_config(path: &Path) -> Result<SolverConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<SolverConfig> {
    let cfg: SolverConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Command-line adjustments applied on top of a loaded configuration.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConfigOverrides {
    pub seed: Option<u64>,
    pub d_max: Option<f64>,
    pub levels: Option<usize>,
    pub iters_per_level: Option<usize>,
    pub step_size: Option<f64>,
}

impl ConfigOverrides {
    pub fn apply(&self, mut cfg: SolverConfig) -> Result<SolverConfig> {
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.d_max {
            cfg.d_max = v;
        }
        if let Some(v) = self.levels {
            cfg.levels = v;
        }
        if let Some(v) = self.iters_per_level {
            cfg.iters_per_level = v;
        }
        if let Some(v) = self.step_size {
            cfg.step_size = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

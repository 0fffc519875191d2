use std::fs;
use std::path::Path;

use arraycal_core::init::InitConfig;
use arraycal_core::observability::{DEFAULT_ANGLE_TOL, DEFAULT_RANK_TOL};
use arraycal_core::simkit::{MonteCarloConfig, PerturbationBase};
use arraycal_core::solver::SolverConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Environment variable naming the config file used when `--config` is absent.
pub const CONFIG_ENV: &str = "ARRAYCAL_CONFIG";

/// Tunables shared by all subcommands. Missing keys take their defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub init: InitConfig,
    pub solver: SolverConfig,
    pub perturbation: PerturbationBase,
    /// Relative singular value cutoff for numerical rank.
    pub rank_tolerance: f64,
    /// Radians; collinearity and coplanarity tolerance of the condition checks.
    pub angle_tolerance: f64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            init: InitConfig::default(),
            solver: SolverConfig::default(),
            perturbation: PerturbationBase::default(),
            rank_tolerance: DEFAULT_RANK_TOL,
            angle_tolerance: DEFAULT_ANGLE_TOL,
        }
    }
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse("config", &e))
    }

    /// Reads `path`, or returns the defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Config::default()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str(&text).map_err(|e| Error::parse(p.display().to_string(), &e))
            }
        }
    }

    pub fn monte_carlo(&self, trials: usize, seed: u64) -> MonteCarloConfig {
        MonteCarloConfig {
            trials,
            seed,
            init: self.init,
            solver: self.solver,
            perturbation: self.perturbation,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_config_keeps_defaults() {
        let c = Config::from_json(r#"{"solver": {"max_iterations": 7}, "init": {"z_cut": 2.5}}"#).unwrap();
        assert_eq!(c.solver.max_iterations, 7);
        assert_eq!(c.solver.step_threshold, SolverConfig::default().step_threshold);
        assert_eq!(c.init.z_cut, 2.5);
        assert_eq!(c.init.combos_per_step, InitConfig::default().combos_per_step);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(matches!(Config::from_json(r#"{"solvr": {}}"#), Err(Error::Parse { .. })));
    }

    #[test]
    fn round_trip() {
        let c = Config::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(Config::from_json(&text).unwrap(), c);
    }
}

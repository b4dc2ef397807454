use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Candidate trust-region sizes for grid search.
pub const MAX_KL_GRID: [f64; 9] = [0.001, 0.003, 0.005, 0.01, 0.03, 0.05, 0.1, 0.3, 0.5];

/// Candidate batch sizes (dialogs per domain per iteration) for grid search.
pub const DIALOGS_PER_ITERATION_GRID: [usize; 7] = [10, 20, 50, 100, 200, 500, 1000];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrpoConfig {
    /// Trust-region radius δ on the mean KL between consecutive policies.
    pub max_kl: f64,
    /// Training dialogs collected per domain per iteration.
    pub dialogs_per_iteration: usize,
    pub cg_iterations: usize,
    pub cg_damping: f64,
    pub backtrack_steps: usize,
    pub backtrack_coefficient: f64,
    pub discount: f64,
    pub gae_lambda: f64,
    pub value_epochs: usize,
    /// Enforce the KL bound per task instead of on the pooled batch.
    pub per_task_kl: bool,
}

impl Default for TrpoConfig {
    fn default() -> Self {
        Self {
            max_kl: 0.01,
            dialogs_per_iteration: 50,
            cg_iterations: 10,
            cg_damping: 0.1,
            backtrack_steps: 10,
            backtrack_coefficient: 0.5,
            discount: 0.99,
            gae_lambda: 0.97,
            value_epochs: 5,
            per_task_kl: false,
        }
    }
}

impl TrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_kl > 0.0) || !self.max_kl.is_finite() {
            return Err(Error::Config(format!("max_kl must be positive, got {}", self.max_kl)));
        }
        if self.dialogs_per_iteration == 0 || self.cg_iterations == 0 || self.backtrack_steps == 0 {
            return Err(Error::Config(
                "dialogs_per_iteration, cg_iterations and backtrack_steps must be at least 1".into(),
            ));
        }
        if !(self.cg_damping >= 0.0) {
            return Err(Error::Config("cg_damping must be non-negative".into()));
        }
        if !(self.backtrack_coefficient > 0.0 && self.backtrack_coefficient < 1.0) {
            return Err(Error::Config("backtrack_coefficient must lie in (0, 1)".into()));
        }
        for (name, v) in [("discount", self.discount), ("gae_lambda", self.gae_lambda)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_grid_members_and_valid() {
        let c = TrpoConfig::default();
        c.validate().unwrap();
        assert!(MAX_KL_GRID.contains(&c.max_kl));
        assert!(DIALOGS_PER_ITERATION_GRID.contains(&c.dialogs_per_iteration));
        assert_eq!(MAX_KL_GRID.len() * DIALOGS_PER_ITERATION_GRID.len(), 63);
    }

    #[test]
    fn rejects_bad_values() {
        for bad in [
            TrpoConfig { max_kl: 0.0, ..Default::default() },
            TrpoConfig { dialogs_per_iteration: 0, ..Default::default() },
            TrpoConfig { discount: 1.5, ..Default::default() },
            TrpoConfig { gae_lambda: 0.0, ..Default::default() },
            TrpoConfig { backtrack_coefficient: 1.0, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn parses_from_toml_with_defaults() {
        let c: TrpoConfig = toml::from_str("max_kl = 0.05\nper_task_kl = true").unwrap();
        assert_eq!(c.max_kl, 0.05);
        assert!(c.per_task_kl);
        assert_eq!(c.cg_iterations, 10);
        assert!(toml::from_str::<TrpoConfig>("bogus = 1").is_err());
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flcore::TrainingDescription;

/// A worker's blacklist entry: on `dataset_id`, refuse the listed owners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlacklistRule {
    pub worker_index: usize,
    pub dataset_id: String,
    pub blocked_owner_indices: Vec<usize>,
}

fn one() -> usize {
    1
}

/// Scenario file contents (TOML, snake_case keys).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub num_workers: usize,
    pub input_dim: usize,
    pub samples_per_worker: usize,
    pub noise_sigma: f64,
    pub plan: TrainingDescription,
    #[serde(default)]
    pub blacklists: Vec<BlacklistRule>,
    /// Each owner publishes one model trained with `plan`.
    #[serde(default = "one")]
    pub num_owners: usize,
    /// Datasets are named `ds0`, `ds1`, … on every worker.
    #[serde(default = "one")]
    pub datasets_per_worker: usize,
}

impl ScenarioConfig {
    pub fn dataset_id(j: usize) -> String {
        format!("ds{j}")
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_workers == 0 {
            return bad("num_workers must be positive".into());
        }
        if self.num_owners == 0 {
            return bad("num_owners must be positive".into());
        }
        if self.datasets_per_worker == 0 {
            return bad("datasets_per_worker must be positive".into());
        }
        if self.input_dim == 0 || self.samples_per_worker == 0 {
            return bad("input_dim and samples_per_worker must be positive".into());
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!("noise_sigma {} must be finite and >= 0", self.noise_sigma));
        }
        self.plan.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.plan.input_dim != self.input_dim {
            return bad(format!(
                "plan.input_dim {} differs from input_dim {}",
                self.plan.input_dim, self.input_dim
            ));
        }
        for rule in &self.blacklists {
            if rule.worker_index >= self.num_workers {
                return bad(format!("blacklist worker_index {} out of range", rule.worker_index));
            }
            if !(0..self.datasets_per_worker).any(|j| Self::dataset_id(j) == rule.dataset_id) {
                return bad(format!("blacklist dataset_id {:?} does not exist", rule.dataset_id));
            }
            if let Some(o) = rule.blocked_owner_indices.iter().find(|&&o| o >= self.num_owners) {
                return bad(format!("blocked owner index {o} out of range"));
            }
        }
        Ok(())
    }
}

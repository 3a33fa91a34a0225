//! Experiment configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::array_model::SystemConfig;
use crate::bfim::{BfimOptions, DEFAULT_PRIOR_SAMPLES};
use crate::error::{IsacError, Result};
use crate::evaluate::Scenario;
use crate::precoder::ScaOptions;
use crate::priors::{AmplitudeConvention, TargetPrior, TargetPriorSet};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub mean_deg: f64,
    pub sigma_deg: f64,
    #[serde(default = "one")]
    pub path_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    #[serde(default = "one")]
    pub sigma0_sq: f64,
    #[serde(default)]
    pub amplitude_convention: AmplitudeConvention,
    pub targets: Vec<TargetConfig>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub gamma_grid_db: Vec<f64>,
    pub power_list_dbm: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SerConfig {
    /// Noise realizations of the whole frame per grid point.
    #[serde(default = "default_trials")]
    pub trials: usize,
}

impl Default for SerConfig {
    fn default() -> Self {
        Self {
            trials: default_trials(),
        }
    }
}

fn default_trials() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeampatternConfig {
    #[serde(default = "default_step")]
    pub step_deg: f64,
}

impl Default for BeampatternConfig {
    fn default() -> Self {
        Self {
            step_deg: default_step(),
        }
    }
}

fn default_step() -> f64 {
    0.1
}

fn default_samples() -> usize {
    DEFAULT_PRIOR_SAMPLES
}

/// Complete description of one experiment; everything a command needs
/// apart from the seed override and the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub system: SystemConfig,
    pub priors: PriorConfig,
    pub gamma_db: Vec<f64>,
    pub tau_db: Vec<f64>,
    #[serde(default)]
    pub solver: ScaOptions,
    #[serde(default)]
    pub bfim: BfimOptions,
    #[serde(default = "default_samples")]
    pub n_prior_samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub ser: SerConfig,
    #[serde(default)]
    pub beampattern: BeampatternConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| IsacError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| IsacError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(IsacError::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.system.validate()?;
        let pri = self.prior_set()?;
        if pri.n_targets() != self.system.n_targets {
            return Err(IsacError::Config(format!(
                "priors.targets has {} entries, expected n_targets = {}",
                pri.n_targets(),
                self.system.n_targets
            )));
        }
        if self.gamma_db.len() != self.system.n_users {
            return Err(IsacError::Config(format!(
                "gamma_db has {} entries, expected n_users = {}",
                self.gamma_db.len(),
                self.system.n_users
            )));
        }
        if self.tau_db.len() != self.system.n_targets {
            return Err(IsacError::Config(format!(
                "tau_db has {} entries, expected n_targets = {}",
                self.tau_db.len(),
                self.system.n_targets
            )));
        }
        if self.system.n_users > self.system.n_tx {
            return Err(IsacError::Config("n_users must not exceed n_tx".into()));
        }
        if self.gamma_db.iter().chain(&self.tau_db).any(|v| !v.is_finite()) {
            return Err(IsacError::Config("gamma_db and tau_db must be finite".into()));
        }
        if !(self.solver.epsilon > 0.0 && self.solver.epsilon.is_finite()) {
            return Err(IsacError::Config("solver.epsilon must be positive".into()));
        }
        if self.solver.max_iter == 0 {
            return Err(IsacError::Config("solver.max_iter must be at least 1".into()));
        }
        let a = &self.solver.armijo;
        if !(a.c1 > 0.0
            && a.c1 < 1.0
            && a.shrink > 0.0
            && a.shrink < 1.0
            && a.initial > 0.0
            && a.initial <= 1.0
            && a.min_step > 0.0)
        {
            return Err(IsacError::Config(
                "solver.armijo needs 0 < c1 < 1, 0 < shrink < 1, 0 < initial <= 1, min_step > 0".into(),
            ));
        }
        if self.n_prior_samples == 0 {
            return Err(IsacError::Config("n_prior_samples must be at least 1".into()));
        }
        if let Some(s) = &self.sweep {
            if s.gamma_grid_db.is_empty() || s.power_list_dbm.is_empty() {
                return Err(IsacError::Config(
                    "sweep.gamma_grid_db and sweep.power_list_dbm must be non-empty".into(),
                ));
            }
            if s.gamma_grid_db.iter().chain(&s.power_list_dbm).any(|v| !v.is_finite()) {
                return Err(IsacError::Config("sweep grids must be finite".into()));
            }
        }
        if self.ser.trials == 0 {
            return Err(IsacError::Config("ser.trials must be at least 1".into()));
        }
        let step = self.beampattern.step_deg;
        if !(step > 0.0 && step <= 180.0) {
            return Err(IsacError::Config("beampattern.step_deg must lie in (0, 180]".into()));
        }
        Ok(())
    }

    pub fn prior_set(&self) -> Result<TargetPriorSet> {
        let targets = self
            .priors
            .targets
            .iter()
            .map(|t| TargetPrior {
                mean: t.mean_deg.to_radians(),
                sigma: t.sigma_deg.to_radians(),
                path_loss: t.path_loss,
            })
            .collect();
        let mut set = TargetPriorSet::new(self.priors.sigma0_sq, targets)?;
        set.convention = self.priors.amplitude_convention;
        Ok(set)
    }

    /// The same experiment with the seed replaced.
    pub fn with_seed(&self, seed: Option<u64>) -> Self {
        let mut c = self.clone();
        if let Some(s) = seed {
            c.seed = s;
        }
        c
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn scenario(&self) -> Result<Scenario> {
        Scenario::build(
            self.system.clone(),
            self.prior_set()?,
            self.gamma_db.clone(),
            self.tau_db.clone(),
            self.n_prior_samples,
            self.bfim,
            self.seed,
        )
    }

    pub fn sweep(&self) -> Result<&SweepConfig> {
        self.sweep
            .as_ref()
            .ok_or_else(|| IsacError::Config("this command needs a \"sweep\" section".into()))
    }
}

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linear::FitSettings;
use crate::mpc::{EquilibriumSettings, OcpSettings, StageCostParams};
use crate::nnarx::{Architecture, TrainingConfig};
use crate::pi::PiGains;
use crate::plant::PlantParams;
use crate::signals::ReferenceProfile;

/// Whole-pipeline configuration, read from TOML. Every key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Base seed; every noise stream derives from it.
    pub seed: u64,
    pub plant: PlantParams,
    pub pi: PiGains,
    pub identification: IdentificationConfig,
    pub nnarx: NnarxConfig,
    pub mpc: MpcConfig,
    pub experiment: ExperimentConfig,
    pub paths: Paths,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 1,
            plant: PlantParams::default(),
            pi: PiGains::default(),
            identification: IdentificationConfig::default(),
            nnarx: NnarxConfig::default(),
            mpc: MpcConfig::default(),
            experiment: ExperimentConfig::default(),
            paths: Paths::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentificationConfig {
    /// Reference for the PI-controlled excitation run.
    pub profile: ReferenceProfile,
    /// Reference for the held-out run used in the prediction benchmark.
    pub validation_profile: ReferenceProfile,
    /// Plant seconds per model sample.
    pub resample_factor: usize,
    pub fit: FitSettings,
}

impl Default for IdentificationConfig {
    fn default() -> Self {
        Self {
            profile: ReferenceProfile::identification_default(),
            validation_profile: ReferenceProfile::validation_default(),
            resample_factor: 6,
            fit: FitSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct NnarxConfig {
    pub architecture: Architecture,
    pub training: TrainingConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    pub cost: StageCostParams,
    pub ocp: OcpSettings,
    pub equilibrium: EquilibriumSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: ReferenceProfile,
    /// Cost window, seconds.
    pub t0: f64,
    pub t_end: f64,
    /// Plant seconds in which the MPC iteration budget is forced to zero.
    pub zero_budget_window: Option<(f64, f64)>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            profile: ReferenceProfile::evaluation_default(),
            t0: 600.0,
            t_end: 3360.0,
            zero_budget_window: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
        }
    }
}

impl Paths {
    pub fn identification_log(&self) -> PathBuf {
        self.out_dir.join("identification_raw.csv")
    }
    pub fn identification_data(&self) -> PathBuf {
        self.out_dir.join("identification_6s.csv")
    }
    pub fn validation_data(&self) -> PathBuf {
        self.out_dir.join("validation_6s.csv")
    }
    pub fn linear_model(&self) -> PathBuf {
        self.out_dir.join("linear_model.json")
    }
    pub fn nnarx_model(&self) -> PathBuf {
        self.out_dir.join("nnarx_model.json")
    }
    pub fn loss_curve(&self) -> PathBuf {
        self.out_dir.join("nnarx_loss.csv")
    }
    pub fn experiment_log(&self, tag: &str) -> PathBuf {
        self.out_dir.join(format!("run_{tag}.csv"))
    }
}

/// Independent noise streams derived from the base seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Identification,
    Validation,
    Experiment,
}

impl Config {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        if self.identification.resample_factor == 0 {
            return Err(Error::Config("resample_factor must be positive".into()));
        }
        if self.mpc.cost.lambda < 0.0 || !self.mpc.cost.lambda.is_finite() {
            return Err(Error::Config(format!("lambda = {} must be >= 0", self.mpc.cost.lambda)));
        }
        if self.mpc.ocp.horizon == 0 {
            return Err(Error::Config("MPC horizon must be positive".into()));
        }
        self.nnarx.architecture.validate()?;
        Ok(())
    }

    pub fn stream_seed(&self, stream: Stream) -> u64 {
        let offset = match stream {
            Stream::Identification => 0,
            Stream::Validation => 1,
            Stream::Experiment => 2,
        };
        self.seed.wrapping_mul(3).wrapping_add(offset)
    }

    /// SHA-256 of the canonical JSON rendering.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

//! Run configuration: one TOML document with a section per subsystem.
//! Unknown keys are rejected so typos cannot silently change an experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{CentralConfig, KnnWeighting};
use crate::environment::{RoomEnvironment, RoomParams, ScenarioSpec};
use crate::error::{Error, Result};
use crate::federation::FederationConfig;
use crate::metrics::ErrorDim;
use crate::nn::{Architecture, MlpConfig};
use crate::sensing::SensingConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    /// Points per side of the held-out test grid.
    pub grid_points: usize,
    pub error_dim: ErrorDim,
    /// Evaluate every this many rounds (the last round is always evaluated).
    pub every: u32,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            grid_points: 41,
            error_dim: ErrorDim::ThreeD,
            every: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub knn: bool,
    pub knn_k: usize,
    pub knn_weighting: KnnWeighting,
    pub mlp: bool,
    pub mlp_model: MlpConfig,
    /// Learning rate for the MLP arm; the federation rate when absent.
    pub mlp_learning_rate: Option<f64>,
    /// Central training of the frozen one-shot arm.
    pub frozen: CentralConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            knn: true,
            knn_k: 4,
            knn_weighting: KnnWeighting::InverseDistance,
            mlp: true,
            mlp_model: MlpConfig::default(),
            mlp_learning_rate: None,
            frozen: CentralConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Rounds per nonstationary scenario after pre-training.
    pub rounds: u32,
    /// Scenarios to run from the shared pre-trained checkpoint.
    pub scenarios: Vec<crate::environment::ScenarioKind>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        use crate::environment::ScenarioKind::*;
        SweepConfig {
            rounds: 100,
            scenarios: vec![Stationary, AmbientDrift, LedBlackout, DeviceAging],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    /// Save global weights every this many rounds (0: final weights only).
    pub checkpoint_interval: u32,
    pub environment: RoomParams,
    pub scenario: ScenarioSpec,
    pub sensing: SensingConfig,
    pub federation: FederationConfig,
    pub model: Architecture,
    pub evaluation: EvaluationConfig,
    pub baselines: BaselineConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 2024,
            out_dir: None,
            checkpoint_interval: 10,
            environment: RoomParams::default(),
            scenario: ScenarioSpec::default(),
            sensing: SensingConfig::default(),
            federation: FederationConfig::default(),
            model: Architecture::default(),
            evaluation: EvaluationConfig::default(),
            baselines: BaselineConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses TOML; errors carry the line, column and offending key.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.federation.seed = cfg.seed;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config always serializes")
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.federation.seed = seed;
    }

    /// Builds the environment and checks every section against it.
    pub fn validate(&self) -> Result<RoomEnvironment> {
        let env = self
            .environment
            .build()
            .map_err(|e| Error::Config(format!("environment: {e}")))?;
        self.scenario.validate(env.n_leds())?;
        self.sensing.validate(env.dims)?;
        self.federation.validate(self.sensing.dataset_size)?;
        let (n_inputs, output_dim) = match &self.model {
            Architecture::Cvposnet(c) => {
                c.validate()
                    .map_err(|e| Error::Config(format!("model: {e}")))?;
                (c.n_inputs, c.output_dim)
            }
            Architecture::Mlp(c) => (c.n_inputs, c.output_dim),
        };
        if n_inputs != env.n_leds() || self.baselines.mlp_model.n_inputs != env.n_leds() {
            return Err(Error::Config(format!(
                "model.n_inputs must equal the LED count {}",
                env.n_leds()
            )));
        }
        if !(2..=3).contains(&output_dim) || self.baselines.mlp_model.output_dim != output_dim {
            return Err(Error::Config(
                "model.output_dim must be 2 or 3 and shared by every network".into(),
            ));
        }
        if self.baselines.knn_k == 0 {
            return Err(Error::Config("baselines.knn_k must be at least 1".into()));
        }
        if self.evaluation.grid_points < 2 {
            return Err(Error::Config(
                "evaluation.grid_points must be at least 2".into(),
            ));
        }
        if self.evaluation.every == 0 {
            return Err(Error::Config("evaluation.every must be at least 1".into()));
        }
        if self.baselines.frozen.minibatch_size == 0 {
            return Err(Error::Config(
                "baselines.frozen.minibatch_size must be at least 1".into(),
            ));
        }
        Ok(env)
    }

    /// The reduced profile used for quick checks: 50 rounds, 300 samples per UE.
    pub fn ci_profile() -> Self {
        let mut c = RunConfig::default();
        c.federation.rounds = 50;
        c.sensing.dataset_size = 300;
        c
    }
}

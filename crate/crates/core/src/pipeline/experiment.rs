use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{LossConfig, LossScenario};
use crate::neural_blocks::ArchConfig;
use crate::scene_sim::{generate_dataset, Dataset, SimConfig};

use super::config::{ModelConfig, OptimizerConfig, TrainScenario, Variant};
use super::eval::{evaluate, Metrics};
use super::model::{assemble_model, Calibration, Model};
use super::train::{train, TrainReport};
use super::split_frames;

/// The training settings compared in the experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    /// Base model trained on synchronized frames.
    BaseS,
    /// BaseS followed by fine-tuning on unsynchronized frames.
    BaseSu,
    /// Base model trained on unsynchronized frames.
    BaseU,
    /// Synchronized counterparts available: `ℓ_p + ℓ_W`.
    SyncPlusUnsync,
    /// Unsynchronized frames only: `ℓ_p + 1000 ℓ_s`.
    UnsyncOnly,
    /// Unsynchronized frames, `ℓ_p` alone.
    TaskOnly,
}

impl Setting {
    pub const ALL: [Setting; 6] = [
        Setting::BaseS,
        Setting::BaseSu,
        Setting::BaseU,
        Setting::SyncPlusUnsync,
        Setting::UnsyncOnly,
        Setting::TaskOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Setting::BaseS => "base_s",
            Setting::BaseSu => "base_su",
            Setting::BaseU => "base_u",
            Setting::SyncPlusUnsync => "sync_plus_unsync",
            Setting::UnsyncOnly => "unsync_only",
            Setting::TaskOnly => "task_only",
        }
    }

    pub fn for_base(self) -> bool {
        matches!(self, Setting::BaseS | Setting::BaseSu | Setting::BaseU)
    }

    pub fn scenario(self) -> TrainScenario {
        match self {
            Setting::BaseS => TrainScenario::base_s(),
            Setting::BaseSu => TrainScenario::base_su(),
            Setting::SyncPlusUnsync => TrainScenario::sync_plus_unsync(),
            Setting::BaseU | Setting::UnsyncOnly | Setting::TaskOnly => TrainScenario::unsync_only(),
        }
    }

    pub fn loss(self) -> LossConfig {
        LossConfig::for_scenario(match self {
            Setting::SyncPlusUnsync => LossScenario::SyncPlusUnsync,
            Setting::UnsyncOnly => LossScenario::UnsyncOnly,
            _ => LossScenario::TaskOnly,
        })
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.replace('-', "_");
        Setting::ALL
            .into_iter()
            .find(|c| c.name() == key)
            .ok_or_else(|| Error::Config(format!("unknown setting {s:?}")))
    }
}

/// Everything needed to train and evaluate one model on a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub setting: Setting,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    /// Leading fraction of frames used for training; the rest is the test
    /// split.
    pub train_fraction: f64,
}

impl ExperimentConfig {
    /// Desk-scale defaults for a 3-view, 64×48 dataset.
    pub fn desk(variant: Variant, setting: Setting) -> Result<Self> {
        if setting.for_base() != (variant == Variant::Base) {
            return Err(Error::Config(format!(
                "setting {setting} does not apply to variant {}",
                variant.name()
            )));
        }
        let mut model = ModelConfig::new(variant, 3, (64, 48));
        model.arch = ArchConfig {
            width_divisor: 4,
            ..ArchConfig::default()
        };
        model.corr_max_cells = 192;
        model.sigma = 1.5;
        model.density_scale = 1000.0;
        model.loss = setting.loss();
        model.seed = 7;
        let optimizer = OptimizerConfig {
            steps: 4000,
            grad_clip: Some(1e5),
            ..OptimizerConfig::default()
        };
        Ok(ExperimentConfig {
            setting,
            model,
            optimizer,
            train_fraction: 0.75,
        })
    }

    pub fn scenario(&self) -> TrainScenario {
        self.setting.scenario()
    }

    pub fn validate(&self) -> Result<()> {
        if self.setting.for_base() != (self.model.variant == Variant::Base) {
            return Err(Error::Config(format!(
                "setting {} does not apply to variant {}",
                self.setting,
                self.model.variant.name()
            )));
        }
        if self.model.loss.scenario != self.setting.loss().scenario {
            return Err(Error::Config(format!(
                "setting {} expects the {:?} loss",
                self.setting,
                self.setting.loss().scenario
            )));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config("train_fraction must lie in (0, 1)".into()));
        }
        self.model.validate()?;
        self.optimizer.validate()?;
        self.scenario().validate(&self.model.loss)
    }

    /// Make the model match the dataset's views, image size and reference.
    pub fn adapt_to(&mut self, ds: &Dataset) {
        self.model.n_views = ds.n_views();
        self.model.image_size = (ds.manifest.image_width, ds.manifest.image_height);
        self.model.reference_view = ds.manifest.reference_view;
    }
}

/// The synthetic sequence used for the variant comparison: 3 views, a
/// 48×56 grid, random latency up to three frames and a fresh crowd every
/// 20 frames.
pub fn desk_benchmark_sim() -> SimConfig {
    let mut sim = SimConfig::desk();
    sim.n_frames = 400;
    sim.segment_frames = Some(5);
    sim
}

pub fn desk_benchmark_dataset() -> Result<Dataset> {
    generate_dataset(&desk_benchmark_sim(), 1)
}

/// Result of training and evaluating one configuration.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub model: Model,
    pub report: TrainReport,
    /// Test split, unsynchronized inputs.
    pub metrics: Metrics,
    /// Test split, every view captured at the reference time.
    pub synced_metrics: Option<Metrics>,
    pub seconds: f64,
}

pub fn calibration_of(ds: &Dataset) -> Calibration {
    Calibration {
        scene: ds.scene,
        cameras: ds.cameras.clone(),
    }
}

/// Train from scratch on the training split and evaluate on the test split.
pub fn run_experiment(ds: &Dataset, config: &ExperimentConfig, log: Option<&mut dyn Write>) -> Result<Outcome> {
    config.validate()?;
    let (train_frames, test_frames) = split_frames(ds.n_frames(), config.train_fraction);
    let mut model = assemble_model(&config.model, Some(&calibration_of(ds)))?;
    let start = Instant::now();
    let report = train(&mut model, ds, &config.scenario(), &config.optimizer, &train_frames, 0, log)?;
    let seconds = start.elapsed().as_secs_f64();
    let metrics = evaluate(&model, ds, &test_frames)?;
    let synced_metrics = match ds.synchronized_view() {
        Ok(s) => Some(evaluate(&model, &s, &test_frames)?),
        Err(_) => None,
    };
    Ok(Outcome {
        model,
        report,
        metrics,
        synced_metrics,
        seconds,
    })
}

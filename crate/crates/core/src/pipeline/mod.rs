//! Model assembly for every variant, the two training scenarios, evaluation
//! and model checkpoints.

mod config;
mod eval;
mod experiment;
mod model;
mod optim;
mod train;

use std::path::Path;

use crate::error::{Error, Result};
use crate::neural_blocks::{load_checkpoint, save_checkpoint};

pub use config::{ModelConfig, OptimizerConfig, ScenarioMode, TrainScenario, Variant};
pub use eval::{count_metrics, evaluate, FrameRecord, Metrics};
pub use experiment::{
    calibration_of, desk_benchmark_dataset, desk_benchmark_sim, run_experiment, ExperimentConfig, Outcome, Setting,
};
pub use model::{assemble_model, fused_channels, Calibration, ForwardNodes, Geometry, Inspection, LossValues, Model, Prediction};
pub use optim::{clip_grad_norm, Adam};
pub use train::{frame_for_step, total_steps, train, train_step, Phase, StepRecord, TrainReport};

/// Contiguous split: the first `train_fraction` of frames train, the rest
/// test.
pub fn split_frames(n_frames: usize, train_fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let cut = ((n_frames as f64 * train_fraction).round() as usize).min(n_frames);
    ((0..cut).collect(), (cut..n_frames).collect())
}

/// Save parameters with the model configuration (and `extra`) in the
/// checkpoint metadata.
pub fn save_model(path: &Path, model: &Model, extra: serde_json::Value) -> Result<()> {
    let meta = serde_json::json!({ "model_config": model.config, "extra": extra });
    save_checkpoint(path, &model.params, meta)
}

/// Load a model saved by [`save_model`] and attach `calibration`.
pub fn load_model(path: &Path, calibration: &Calibration) -> Result<(Model, serde_json::Value)> {
    let (params, manifest) = load_checkpoint(path)?;
    let config: ModelConfig = serde_json::from_value(manifest.metadata["model_config"].clone()).map_err(|e| Error::Corrupt {
        what: "checkpoint metadata".into(),
        detail: e.to_string(),
    })?;
    let mut model = assemble_model(&config, Some(calibration))?;
    if model.params.blocks != params.blocks {
        return Err(Error::Corrupt {
            what: "checkpoint".into(),
            detail: "block layout does not match the stored model configuration".into(),
        });
    }
    model.params = params;
    Ok((model, manifest.metadata["extra"].clone()))
}

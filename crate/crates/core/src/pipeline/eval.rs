use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::scene_sim::Dataset;
use crate::tensor::Tensor;

use super::model::Model;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: usize,
    pub gt_count: f64,
    pub pred_count: f64,
    pub abs_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub nae: f64,
    pub n_frames: usize,
    /// Frames contributing to NAE (those with a non-zero ground-truth count).
    pub nae_frames: usize,
    pub frames: Vec<FrameRecord>,
}

/// MAE and NAE of predicted against ground-truth counts. Frames with a zero
/// ground-truth count are left out of NAE.
pub fn count_metrics(frames: &[usize], pred: &[f64], gt: &[f64]) -> Result<Metrics> {
    if pred.len() != gt.len() || frames.len() != gt.len() {
        return Err(Error::shape("count_metrics", gt.len(), pred.len()));
    }
    if gt.is_empty() {
        return Err(Error::InvalidArgument("no frames to evaluate".into()));
    }
    let records: Vec<FrameRecord> = frames
        .iter()
        .zip(pred.iter().zip(gt))
        .map(|(&frame, (&p, &c))| FrameRecord {
            frame,
            gt_count: c,
            pred_count: p,
            abs_error: (p - c).abs(),
        })
        .collect();
    let mae = records.iter().map(|r| r.abs_error).sum::<f64>() / records.len() as f64;
    let mut nae_sum = 0.0;
    let mut nae_frames = 0;
    for r in &records {
        if r.gt_count == 0.0 {
            log::warn!("frame {} has a zero ground-truth count and is excluded from NAE", r.frame);
            continue;
        }
        nae_sum += r.abs_error / r.gt_count;
        nae_frames += 1;
    }
    let nae = if nae_frames == 0 { f64::NAN } else { nae_sum / nae_frames as f64 };
    Ok(Metrics {
        mae,
        nae,
        n_frames: records.len(),
        nae_frames,
        frames: records,
    })
}

/// Predict every listed frame (in parallel) and score counts against the
/// reference-time ground truth.
pub fn evaluate(model: &Model, ds: &Dataset, frames: &[usize]) -> Result<Metrics> {
    if ds.n_views() != model.config.n_views {
        return Err(Error::Config(format!("dataset has {} views, model expects {}", ds.n_views(), model.config.n_views)));
    }
    if frames.iter().any(|&k| k >= ds.n_frames()) {
        return Err(Error::InvalidArgument("evaluation frame out of range".into()));
    }
    let preds = par::map_range(frames.len(), |i| {
        let k = frames[i];
        let images: Vec<Tensor> = (0..ds.n_views()).map(|v| ds.image(v, k)).collect();
        model.predict(&images).map(|p| p.density.count)
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    let gt: Vec<f64> = frames.iter().map(|&k| ds.manifest.counts[k]).collect();
    count_metrics(frames, &preds, &gt)
}

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::error::{Error, Result};
use crate::losses::LossScenario;
use crate::scene_sim::Dataset;
use crate::tensor::Tensor;

use super::config::{OptimizerConfig, ScenarioMode, TrainScenario};
use super::model::{LossValues, Model};
use super::optim::{clip_grad_norm, Adam};

/// Which frames a training phase feeds the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Unsynchronized inputs.
    Main,
    /// Synchronized inputs (BaseS, and the first phase of BaseSU).
    Synced,
    /// Unsynchronized fine-tuning after a synchronized phase.
    Finetune,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub phase: Phase,
    pub frame: usize,
    pub loss_p: f64,
    pub loss_w: f64,
    pub loss_s: f64,
    pub total: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub records: Vec<StepRecord>,
}

impl TrainReport {
    /// Mean of `f` over the first / last `n` records.
    pub fn head_tail_mean(&self, n: usize, f: impl Fn(&StepRecord) -> f64) -> (f64, f64) {
        let n = n.min(self.records.len()).max(1);
        let mean = |r: &[StepRecord]| r.iter().map(&f).sum::<f64>() / r.len().max(1) as f64;
        (mean(&self.records[..n.min(self.records.len())]), mean(&self.records[self.records.len().saturating_sub(n)..]))
    }
}

/// Frame visited at global step `step`: a fresh seeded permutation of
/// `frames` per epoch.
pub fn frame_for_step(frames: &[usize], seed: u64, step: usize) -> usize {
    let epoch = (step / frames.len()) as u64;
    let mut order = frames.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7261_696e ^ epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    order.shuffle(&mut rng);
    order[step % frames.len()]
}

fn view_images(ds: &Dataset, k: usize, synced: bool) -> Result<Vec<Tensor>> {
    (0..ds.n_views())
        .map(|v| if synced { ds.synced_image(v, k) } else { Ok(ds.image(v, k)) })
        .collect()
}

/// Forward and backward for one frame tuple.
pub fn train_step(model: &Model, ds: &Dataset, k: usize, synced_inputs: bool) -> Result<(LossValues, BTreeMap<String, Tensor>)> {
    let mut g = Graph::new();
    let bound = model.params.bind(&mut g, true);
    let images = view_images(ds, k, synced_inputs)?;
    let wants_targets = model.config.variant.has_sync() && model.config.loss.scenario == LossScenario::SyncPlusUnsync;
    let synced = if wants_targets { Some(view_images(ds, k, true)?) } else { None };
    let (root, values) = model.loss_graph(&mut g, &bound, &images, synced.as_deref(), &ds.density(k))?;
    if !values.total.is_finite() {
        return Ok((values, BTreeMap::new()));
    }
    let mut grads = g.backward(root)?;
    let named = bound
        .ids
        .iter()
        .filter_map(|(name, &id)| grads.take(id).map(|t| (name.clone(), t)))
        .collect();
    Ok((values, named))
}

fn check_dataset(model: &Model, ds: &Dataset, scenario: &TrainScenario) -> Result<()> {
    let cfg = &model.config;
    if ds.n_views() != cfg.n_views {
        return Err(Error::Config(format!("dataset has {} views, model expects {}", ds.n_views(), cfg.n_views)));
    }
    if (ds.manifest.image_width, ds.manifest.image_height) != cfg.image_size {
        return Err(Error::Config("dataset image size differs from the model's".into()));
    }
    if ds.manifest.reference_view != cfg.reference_view {
        return Err(Error::Config("dataset and model disagree on the reference view".into()));
    }
    let needs_synced = scenario.train_on_synced || (cfg.variant.has_sync() && cfg.loss.uses_warping());
    if needs_synced && ds.synced.is_none() {
        return Err(Error::Dataset("training scenario needs synchronized counterpart frames".into()));
    }
    if scenario.mode == ScenarioMode::UnsyncOnly && cfg.loss.scenario == LossScenario::SyncPlusUnsync {
        return Err(Error::Config("unsync-only training cannot use the warping loss".into()));
    }
    Ok(())
}

/// Train `model` in place on `frames`, starting at global step `start_step`
/// (non-zero when resuming). Every `log_every` steps a JSON line is written
/// to `log`.
pub fn train(
    model: &mut Model,
    ds: &Dataset,
    scenario: &TrainScenario,
    opt: &OptimizerConfig,
    frames: &[usize],
    start_step: usize,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainReport> {
    opt.validate()?;
    scenario.validate(&model.config.loss)?;
    check_dataset(model, ds, scenario)?;
    if frames.is_empty() || frames.iter().any(|&k| k >= ds.n_frames()) {
        return Err(Error::InvalidArgument("training frames must be a non-empty subset of the dataset".into()));
    }
    model.geometry()?;
    let mut phases = Vec::new();
    if scenario.train_on_synced {
        phases.push((Phase::Synced, opt.steps, opt.learning_rate));
        if scenario.finetune_unsync {
            phases.push((Phase::Finetune, opt.finetune_steps, opt.learning_rate * opt.finetune_lr_factor));
        }
    } else {
        phases.push((Phase::Main, opt.steps, opt.learning_rate));
    }
    let mut adam = Adam::new(opt);
    let mut report = TrainReport::default();
    let mut step = 0usize;
    for (phase, n, lr) in phases {
        for _ in 0..n {
            if step < start_step {
                step += 1;
                continue;
            }
            let k = frame_for_step(frames, model.config.seed, step);
            let (values, mut grads) = train_step(model, ds, k, phase == Phase::Synced)?;
            if !values.total.is_finite() {
                return Err(Error::Diverged {
                    step,
                    detail: format!(
                        "frame {k}: loss_p {} loss_w {} loss_s {}",
                        values.loss_p, values.loss_w, values.loss_s
                    ),
                });
            }
            let grad_norm = match opt.grad_clip {
                Some(c) => clip_grad_norm(&mut grads, c),
                None => clip_grad_norm(&mut grads, f64::INFINITY),
            };
            if !grad_norm.is_finite() {
                return Err(Error::Diverged {
                    step,
                    detail: format!("frame {k}: non-finite gradient"),
                });
            }
            adam.update(&mut model.params.tensors, &grads, lr);
            let rec = StepRecord {
                step,
                phase,
                frame: k,
                loss_p: values.loss_p,
                loss_w: values.loss_w,
                loss_s: values.loss_s,
                total: values.total,
                grad_norm,
            };
            if step % opt.log_every == 0 {
                log::debug!("step {step} total {:.6}", rec.total);
                if let Some(w) = log.as_deref_mut() {
                    writeln!(w, "{}", serde_json::to_string(&rec)?)?;
                }
            }
            report.records.push(rec);
            step += 1;
        }
    }
    if !model.params.is_finite() {
        return Err(Error::Diverged {
            step,
            detail: "parameters became non-finite".into(),
        });
    }
    Ok(report)
}

/// Total number of steps a scenario runs.
pub fn total_steps(scenario: &TrainScenario, opt: &OptimizerConfig) -> usize {
    opt.steps + if scenario.train_on_synced && scenario.finetune_unsync { opt.finetune_steps } else { 0 }
}

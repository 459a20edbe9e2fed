//! Task, warping and similarity losses and their γ-weighted combination.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::maps::{DensityMap, FeatureMap};

/// Which auxiliary term accompanies the task loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossScenario {
    /// Synchronized counterparts available: `ℓ_p + γ Σ ℓ_W`.
    SyncPlusUnsync,
    /// Unsynchronized frames only: `ℓ_p + γ Σ ℓ_s`.
    UnsyncOnly,
    TaskOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub gamma: f64,
    pub scenario: LossScenario,
}

impl LossConfig {
    /// γ = 1 with the warping loss, γ = 1000 with the similarity loss.
    pub fn for_scenario(scenario: LossScenario) -> Self {
        let gamma = match scenario {
            LossScenario::SyncPlusUnsync => 1.0,
            LossScenario::UnsyncOnly => 1000.0,
            LossScenario::TaskOnly => 0.0,
        };
        LossConfig { gamma, scenario }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be finite and non-negative, got {}", self.gamma)));
        }
        Ok(())
    }

    pub fn uses_warping(&self) -> bool {
        self.scenario == LossScenario::SyncPlusUnsync
    }

    pub fn uses_similarity(&self) -> bool {
        self.scenario == LossScenario::UnsyncOnly
    }
}

/// Evaluated loss terms of one training example.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub task: f64,
    /// One entry per non-reference view (and scale, at camera level).
    pub warping: Vec<f64>,
    /// One entry per non-reference view.
    pub similarity: Vec<f64>,
}

fn check_same_shape(a: &FeatureMap, b: &FeatureMap, op: &str) -> Result<()> {
    if a.tensor.shape() != b.tensor.shape() {
        return Err(Error::shape(op, format!("{:?}", a.tensor.shape()), format!("{:?}", b.tensor.shape())));
    }
    Ok(())
}

/// Mean squared error between predicted and ground-truth density.
pub fn task_loss(pred: &DensityMap, gt: &DensityMap) -> Result<f64> {
    if (pred.rows, pred.cols) != (gt.rows, gt.cols) {
        return Err(Error::shape("task_loss", format!("{}x{}", gt.rows, gt.cols), format!("{}x{}", pred.rows, pred.cols)));
    }
    let n = pred.values.len().max(1) as f64;
    Ok(pred.values.iter().zip(&gt.values).map(|(p, g)| (p - g) * (p - g)).sum::<f64>() / n)
}

/// `mse(F^{t0}, W(w, F^{ti}))`; only defined when synchronized counterparts
/// exist.
pub fn warping_loss(synced: &FeatureMap, warped: &FeatureMap, config: &LossConfig) -> Result<f64> {
    if !config.uses_warping() {
        return Err(Error::LossTerm(format!(
            "warping loss needs synchronized frames and is not available in {:?} training",
            config.scenario
        )));
    }
    check_same_shape(synced, warped, "warping_loss")?;
    let mut g = Graph::new();
    let a = g.constant(synced.tensor.clone());
    let b = g.constant(warped.tensor.clone());
    let l = g.mse(a, b)?;
    Ok(g.scalar(l))
}

/// Mean over spatial locations of `1 − cos` along channels. Locations where
/// the reference vector is numerically zero are skipped; a zero warped
/// vector counts as orthogonal.
pub fn similarity_loss(ref_proj: &FeatureMap, warped_proj: &FeatureMap) -> Result<f64> {
    check_same_shape(ref_proj, warped_proj, "similarity_loss")?;
    let mut g = Graph::new();
    let a = g.constant(ref_proj.tensor.clone());
    let b = g.constant(warped_proj.tensor.clone());
    let l = g.cosine_loss(a, b)?;
    Ok(g.scalar(l))
}

fn check_parts(has_warping: bool, has_similarity: bool, config: &LossConfig) -> Result<()> {
    config.validate()?;
    match config.scenario {
        LossScenario::SyncPlusUnsync if !has_warping => Err(Error::LossTerm("warping terms missing".into())),
        LossScenario::UnsyncOnly if !has_similarity => Err(Error::LossTerm("similarity terms missing".into())),
        LossScenario::UnsyncOnly if has_warping => Err(Error::LossTerm("warping terms given in unsync-only training".into())),
        _ => Ok(()),
    }
}

pub fn total_loss(parts: &LossParts, config: &LossConfig) -> Result<f64> {
    check_parts(!parts.warping.is_empty(), !parts.similarity.is_empty(), config)?;
    let aux: f64 = match config.scenario {
        LossScenario::SyncPlusUnsync => parts.warping.iter().sum(),
        LossScenario::UnsyncOnly => parts.similarity.iter().sum(),
        LossScenario::TaskOnly => 0.0,
    };
    Ok(parts.task + config.gamma * aux)
}

/// Graph form of [`total_loss`] over scalar nodes.
pub fn total_loss_graph(g: &mut Graph, task: NodeId, warping: &[NodeId], similarity: &[NodeId], config: &LossConfig) -> Result<NodeId> {
    check_parts(!warping.is_empty(), !similarity.is_empty(), config)?;
    let aux: &[NodeId] = match config.scenario {
        LossScenario::SyncPlusUnsync => warping,
        LossScenario::UnsyncOnly => similarity,
        LossScenario::TaskOnly => &[],
    };
    let mut terms = vec![(task, 1.0)];
    terms.extend(aux.iter().map(|&n| (n, config.gamma)));
    g.weighted_sum(&terms)
}

use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::error::{Error, Result};
use crate::geometry::EpipolarMask;
use crate::maps::{FeatureMap, MotionFlow};
use crate::neural_blocks::{run_block, ModelParameters};
use crate::tensor::Tensor;

use super::graph::{cls_flows_graph, compose_flows_graph, sls_graph, ScalePlan};
use super::cls_block;

/// Camera-level matching method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Matcher {
    Cat,
    Cor,
    Epi,
}

impl FromStr for Matcher {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cat" => Ok(Matcher::Cat),
            "cor" => Ok(Matcher::Cor),
            "epi" => Ok(Matcher::Epi),
            _ => Err(Error::Config(format!("unknown matcher {s:?} (expected cat, cor or epi)"))),
        }
    }
}

/// All-pairs match scores between a source (reference) grid `(H, W)` and a
/// destination (other view) grid `(H', W')`, stored as an `H'W'`-channel map
/// over the source grid: `scores[q, y, x]` pairs source `(x, y)` with
/// destination location `q`.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationVolume {
    pub scores: Tensor,
    pub src_size: (usize, usize),
    pub dst_size: (usize, usize),
    /// Scores divided by the channel count.
    pub normalized: bool,
}

impl CorrelationVolume {
    pub fn score(&self, src: (usize, usize), dst: (usize, usize)) -> f64 {
        let q = dst.1 * self.dst_size.1 + dst.0;
        self.scores.at3(q, src.1, src.0)
    }

    /// The volume with source and destination roles exchanged.
    pub fn transposed(&self) -> CorrelationVolume {
        let (h, w) = self.src_size;
        let (ho, wo) = self.dst_size;
        let data = crate::kernels::transpose(self.scores.data(), ho * wo, h * w);
        CorrelationVolume {
            scores: Tensor::from_vec(&[h * w, ho, wo], data).expect("volume shape"),
            src_size: self.dst_size,
            dst_size: self.src_size,
            normalized: self.normalized,
        }
    }

    /// Motion-net input over the source grid.
    pub fn to_feature_map(&self, like: &FeatureMap) -> Result<FeatureMap> {
        FeatureMap::new(self.scores.clone(), like.view_id, like.timestamp, like.frame)
    }
}

/// Backward warp: `out(x, y) = input(x + dx, y + dy)`, zero outside.
pub fn warp(features: &FeatureMap, flow: &MotionFlow) -> Result<FeatureMap> {
    let (c, h, w) = features.tensor.dims3()?;
    if (flow.height(), flow.width()) != (h, w) {
        return Err(Error::shape("warp", format!("{h}x{w}"), format!("{}x{}", flow.height(), flow.width())));
    }
    let out = crate::kernels::warp_forward(features.tensor.data(), flow.flow.data(), c, h, w);
    FeatureMap::new(Tensor::from_vec(&[c, h, w], out)?, features.view_id, features.timestamp, features.frame)
}

fn check_same_frame(a: &FeatureMap, b: &FeatureMap, op: &str) -> Result<()> {
    if a.frame != b.frame {
        return Err(Error::InvalidArgument(format!("{op}: feature maps are on different planes")));
    }
    Ok(())
}

pub fn sls_sync(ref_proj: &FeatureMap, other_proj: &FeatureMap, params: &ModelParameters) -> Result<(FeatureMap, MotionFlow)> {
    check_same_frame(ref_proj, other_proj, "sls_sync")?;
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let r = g.constant(ref_proj.tensor.clone());
    let o = g.constant(other_proj.tensor.clone());
    let (warped, flow) = sls_graph(&mut g, params, &bound, r, o)?;
    let pair = (ref_proj.view_id, other_proj.view_id);
    Ok((
        FeatureMap::new(g.value(warped).clone(), other_proj.view_id, ref_proj.timestamp, other_proj.frame)?,
        MotionFlow::new(g.value(flow).clone(), 1, pair)?,
    ))
}

/// Channel concatenation, reference first.
pub fn match_concat(ref_feat: &FeatureMap, other_feat: &FeatureMap) -> Result<FeatureMap> {
    let (_, h, w) = ref_feat.tensor.dims3()?;
    let (_, ho, wo) = other_feat.tensor.dims3()?;
    if (h, w) != (ho, wo) {
        return Err(Error::shape("match_concat", format!("{h}x{w}"), format!("{ho}x{wo}")));
    }
    let mut g = Graph::new();
    let r = g.constant(ref_feat.tensor.clone());
    let o = g.constant(other_feat.tensor.clone());
    let cat = g.concat(&[r, o])?;
    FeatureMap::new(g.value(cat).clone(), ref_feat.view_id, ref_feat.timestamp, ref_feat.frame)
}

/// `scores((x, y), (x', y')) = ⟨ref(x, y), other(x', y')⟩`, divided by the
/// channel count when `normalized`.
pub fn match_correlation(ref_feat: &FeatureMap, other_feat: &FeatureMap, normalized: bool) -> Result<CorrelationVolume> {
    let (c, h, w) = ref_feat.tensor.dims3()?;
    let (co, ho, wo) = other_feat.tensor.dims3()?;
    if c != co {
        return Err(Error::shape("match_correlation channels", c, co));
    }
    let scale = if normalized { 1.0 / c as f64 } else { 1.0 };
    let data = crate::kernels::correlation_forward(ref_feat.tensor.data(), other_feat.tensor.data(), c, h * w, ho * wo, scale);
    Ok(CorrelationVolume {
        scores: Tensor::from_vec(&[ho * wo, h, w], data)?,
        src_size: (h, w),
        dst_size: (ho, wo),
        normalized,
    })
}

pub fn apply_epipolar_weights(volume: &CorrelationVolume, mask: &EpipolarMask) -> Result<CorrelationVolume> {
    if mask.src_size != volume.src_size || mask.dst_size != volume.dst_size {
        return Err(Error::shape(
            "apply_epipolar_weights",
            format!("{:?} -> {:?}", volume.src_size, volume.dst_size),
            format!("{:?} -> {:?}", mask.src_size, mask.dst_size),
        ));
    }
    let data = volume.scores.data().iter().zip(&mask.weights).map(|(s, m)| s * m).collect();
    Ok(CorrelationVolume {
        scores: Tensor::from_vec(volume.scores.shape(), data)?,
        ..volume.clone()
    })
}

/// Single-scale camera-level synchronization with motion block 1. `pool`
/// average-pools both maps to the matcher's working resolution; the flow is
/// returned at the input resolution.
pub fn cls_sync(
    ref_feat: &FeatureMap,
    other_feat: &FeatureMap,
    matcher: Matcher,
    mask: Option<&EpipolarMask>,
    params: &ModelParameters,
    pool: usize,
) -> Result<(FeatureMap, MotionFlow)> {
    check_same_frame(ref_feat, other_feat, "cls_sync")?;
    if matcher == Matcher::Epi && mask.is_none() {
        return Err(Error::Config("epi matcher requires an epipolar mask".into()));
    }
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let r = g.constant(ref_feat.tensor.clone());
    let o = g.constant(other_feat.tensor.clone());
    let plan = ScalePlan {
        pool,
        mask: mask.filter(|_| matcher == Matcher::Epi).map(|m| Arc::new(m.weights.clone())),
    };
    let flows = cls_flows_graph(&mut g, params, &bound, matcher, &[r], &[o], &[plan])?;
    let warped = g.warp(o, flows[0])?;
    Ok((
        FeatureMap::new(g.value(warped).clone(), other_feat.view_id, ref_feat.timestamp, other_feat.frame)?,
        MotionFlow::new(g.value(flows[0]).clone(), 1, (ref_feat.view_id, other_feat.view_id))?,
    ))
}

/// Chain per-scale residual flows (coarsest first) into refined flows.
pub fn compose_multiscale(residuals: &[MotionFlow]) -> Result<Vec<MotionFlow>> {
    let mut g = Graph::new();
    let ids: Vec<_> = residuals.iter().map(|r| g.constant(r.flow.clone())).collect();
    let flows = compose_flows_graph(&mut g, &ids)?;
    let pair = residuals.first().map_or((0, 0), |r| r.view_pair);
    flows
        .iter()
        .enumerate()
        .map(|(j, &id)| MotionFlow::new(g.value(id).clone(), j + 1, pair))
        .collect()
}

/// Run motion block `j` on each per-scale residual input (coarsest first) and
/// compose the refined flows.
pub fn multiscale_flow(inputs: &[FeatureMap], params: &ModelParameters, view_pair: (usize, usize)) -> Result<Vec<MotionFlow>> {
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("multiscale_flow needs at least one scale".into()));
    }
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let mut residuals = Vec::with_capacity(inputs.len());
    for (j, inp) in inputs.iter().enumerate() {
        let x = g.constant(inp.tensor.clone());
        residuals.push(run_block(&mut g, params, &bound, &cls_block(j + 1), x, &[])?.0);
    }
    let flows = compose_flows_graph(&mut g, &residuals)?;
    flows
        .iter()
        .enumerate()
        .map(|(j, &id)| MotionFlow::new(g.value(id).clone(), j + 1, view_pair))
        .collect()
}

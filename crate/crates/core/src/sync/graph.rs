use std::sync::Arc;

use crate::autograd::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::neural_blocks::{run_block, BoundParams, ModelParameters};

use super::ops::Matcher;
use super::{cls_block, SLS_BLOCK};

/// Per-scale settings for camera-level synchronization.
#[derive(Clone, Debug)]
pub struct ScalePlan {
    /// Average-pool factor taking the scale's features to the working
    /// resolution of the matcher (1 = native).
    pub pool: usize,
    /// Epipolar weights at the working resolution, destination-major.
    pub mask: Option<Arc<Vec<f64>>>,
}

/// Matcher output for one scale, laid out over the reference grid.
pub fn match_graph(g: &mut Graph, matcher: Matcher, r: NodeId, o: NodeId, mask: Option<&Arc<Vec<f64>>>) -> Result<NodeId> {
    match matcher {
        Matcher::Cat => g.concat(&[r, o]),
        Matcher::Cor | Matcher::Epi => {
            let c = g.value(r).dims3()?.0;
            let vol = g.correlate(r, o, 1.0 / c as f64)?;
            match (matcher, mask) {
                (Matcher::Epi, Some(m)) => g.mul_const(vol, Arc::clone(m)),
                (Matcher::Epi, None) => Err(Error::Config("epi matcher requires an epipolar mask".into())),
                _ => Ok(vol),
            }
        }
    }
}

/// Resample a correlation volume `[H₁'W₁', H₁, W₁]` to `[H₂'W₂', H₂, W₂]`,
/// bilinearly along both the source and destination grids.
pub fn resize_volume_graph(
    g: &mut Graph,
    x: NodeId,
    dst_from: (usize, usize),
    src_to: (usize, usize),
    dst_to: (usize, usize),
) -> Result<NodeId> {
    let (q, h, w) = g.value(x).dims3()?;
    if q != dst_from.0 * dst_from.1 {
        return Err(Error::shape("resize_volume", dst_from.0 * dst_from.1, q));
    }
    let y = if (h, w) == src_to { x } else { g.resize(x, src_to.0, src_to.1, 1.0)? };
    if dst_from == dst_to {
        return Ok(y);
    }
    let t = g.transpose_map(y, dst_from.0, dst_from.1)?;
    let z = g.resize(t, dst_to.0, dst_to.1, 1.0)?;
    g.transpose_map(z, src_to.0, src_to.1)
}

/// `w⁽¹⁾ = w̃⁽¹⁾`, `w⁽ʲ⁾ = up(w⁽ʲ⁻¹⁾) + w̃⁽ʲ⁾`; `up` resizes to the next
/// scale and rescales displacements by the size ratio.
pub fn compose_flows_graph(g: &mut Graph, residuals: &[NodeId]) -> Result<Vec<NodeId>> {
    let mut flows: Vec<NodeId> = Vec::with_capacity(residuals.len());
    for &r in residuals {
        let (c, h, w) = g.value(r).dims3()?;
        if c != 2 {
            return Err(Error::shape("flow", 2, c));
        }
        let next = match flows.last() {
            None => r,
            Some(&prev) => {
                let (_, ph, pw) = g.value(prev).dims3()?;
                if h * pw != w * ph || h < ph {
                    return Err(Error::shape("flow scale chain", format!("multiple of {ph}x{pw}"), format!("{h}x{w}")));
                }
                let gain = h as f64 / ph as f64;
                let up = if (ph, pw) == (h, w) { prev } else { g.resize(prev, h, w, gain)? };
                g.add(up, r)?
            }
        };
        flows.push(next);
    }
    Ok(flows)
}

/// Camera-level flows for one view pair, finest-resolution flow per scale.
/// Feature lists are coarsest first; all maps of one scale share a size.
#[allow(clippy::too_many_arguments)]
pub fn cls_flows_graph(
    g: &mut Graph,
    params: &ModelParameters,
    bound: &BoundParams,
    matcher: Matcher,
    ref_feats: &[NodeId],
    other_feats: &[NodeId],
    plans: &[ScalePlan],
) -> Result<Vec<NodeId>> {
    if ref_feats.len() != other_feats.len() || ref_feats.len() != plans.len() || plans.is_empty() {
        return Err(Error::InvalidArgument("per-scale inputs must have equal, non-zero length".into()));
    }
    let mut residuals = Vec::with_capacity(plans.len());
    let mut prev: Option<(NodeId, (usize, usize))> = None;
    for (j, plan) in plans.iter().enumerate() {
        let (_, h, w) = g.value(ref_feats[j]).dims3()?;
        let (_, oh, ow) = g.value(other_feats[j]).dims3()?;
        if (oh, ow) != (h, w) {
            return Err(Error::shape("cls_sync", format!("{h}x{w}"), format!("{oh}x{ow}")));
        }
        let r = g.avgpool(ref_feats[j], plan.pool)?;
        let o = g.avgpool(other_feats[j], plan.pool)?;
        let wsize = (h / plan.pool, w / plan.pool);
        let m = match_graph(g, matcher, r, o, plan.mask.as_ref())?;
        let input = match (matcher, prev) {
            (Matcher::Cor | Matcher::Epi, Some((pm, psize))) => {
                let up = resize_volume_graph(g, pm, psize, wsize, wsize)?;
                g.sub(m, up)?
            }
            _ => m,
        };
        prev = Some((m, wsize));
        let (res, _) = run_block(g, params, bound, &cls_block(j + 1), input, &[])?;
        let res = if plan.pool == 1 { res } else { g.resize(res, h, w, plan.pool as f64)? };
        residuals.push(res);
    }
    compose_flows_graph(g, &residuals)
}

/// Scene-level synchronization: returns `(warped other, flow)`.
pub fn sls_graph(
    g: &mut Graph,
    params: &ModelParameters,
    bound: &BoundParams,
    ref_proj: NodeId,
    other_proj: NodeId,
) -> Result<(NodeId, NodeId)> {
    let (_, h, w) = g.value(ref_proj).dims3()?;
    let (_, ho, wo) = g.value(other_proj).dims3()?;
    if (h, w) != (ho, wo) {
        return Err(Error::shape("sls_sync", format!("{h}x{w}"), format!("{ho}x{wo}")));
    }
    let cat = g.concat(&[ref_proj, other_proj])?;
    let (flow, _) = run_block(g, params, bound, SLS_BLOCK, cat, &[])?;
    let warped = g.warp(other_proj, flow)?;
    Ok((warped, flow))
}

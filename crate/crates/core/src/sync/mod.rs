//! Flow-guided warping, scene- and camera-level synchronization, the three
//! matchers and multi-scale flow fusion.
//!
//! Graph-level builders (`*_graph`) are what the pipeline trains; the plain
//! functions run a single forward pass on concrete maps.

mod graph;
mod ops;

pub use graph::{cls_flows_graph, compose_flows_graph, match_graph, resize_volume_graph, sls_graph, ScalePlan};
pub use ops::{
    apply_epipolar_weights, cls_sync, compose_multiscale, match_concat, match_correlation, multiscale_flow, sls_sync,
    warp, CorrelationVolume, Matcher,
};

/// Motion block used by scene-level synchronization.
pub const SLS_BLOCK: &str = "motion.sls";

/// Motion block for camera-level scale `j` (1-based, coarsest first).
pub fn cls_block(j: usize) -> String {
    format!("motion.cls.{j}")
}

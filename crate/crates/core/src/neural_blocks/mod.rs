//! Feature extractor, scene decoder and motion-flow nets at configurable
//! width, plus the checkpoint archive that stores them.

mod checkpoint;
mod nets;
mod params;
mod spec;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use nets::{
    check_divisible, decode, extract_graph, feature_extract, motion_estimate, run_block, tap_layers, upsample_flow,
    DECODER, EXTRACTOR,
};
pub use params::{bias_name, weight_name, BoundParams, ModelParameters};
pub use spec::{
    Activation, ArchConfig, ConvBlockSpec, ConvLayer, DECODER_WIDTHS, EXTRACTOR_TAPS, EXTRACTOR_WIDTHS, MOTION_WIDTHS,
};

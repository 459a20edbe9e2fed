//! Synthetic multi-view crowd scenes: agent walks, camera renderings,
//! scene-level ground truth, desynchronization schedules and the on-disk
//! dataset format.

mod agents;
mod dataset;
mod render;
mod rig;
mod schedule;

pub use crate::maps::DensityMap;
pub use agents::{simulate_agents, states_at, AgentConfig, AgentState, AgentTrack, HeadingMode};
pub use dataset::{
    export_dataset, generate_dataset, ingest_dataset, read_f32, write_f32, Dataset, DatasetManifest, GtMode, SimConfig,
};
pub use render::{render_camera_view, render_scene_density, SplatConfig};
pub use rig::{coverage_mask, desk_rig};
pub use schedule::{make_desync_schedule, DesyncMode, DesyncSchedule};

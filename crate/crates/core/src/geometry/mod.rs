//! Calibrated cameras, ground-plane projection grids, fundamental matrices
//! and epipolar weight masks.

mod calibration;
mod camera;
mod epipolar;
mod projection;

pub use calibration::{CalibrationFile, CameraRecord, SceneRecord};
pub use camera::{CameraModel, ScenePlaneGrid};
pub use epipolar::{build_epipolar_mask, fundamental_from_cameras, EpipolarMask, FundamentalMatrix};
pub use projection::{build_projection_grid, feature_to_image, image_to_feature, project_features, ProjectionGrid};

/// Default Gaussian motion-model width for epipolar masks, in feature-grid
/// pixels.
pub const DEFAULT_EPIPOLAR_SIGMA: f64 = 5.0;

use std::sync::Arc;

use crate::autograd::SamplingMap;
use crate::error::{Error, Result};
use crate::kernels::{self, Taps};
use crate::maps::{FeatureMap, FrameOfReference};
use crate::tensor::Tensor;

use super::camera::{CameraModel, ScenePlaneGrid};

/// Image pixel coordinate to feature-grid coordinate for a map downscaled by
/// `scale`. Pixel centres sit at integers in both grids, so a 2×2 pooled
/// block of pixels `{0, 1}` lands on feature pixel `0`.
#[inline]
pub fn image_to_feature(u: f64, scale: f64) -> f64 {
    (u + 0.5) * scale - 0.5
}

#[inline]
pub fn feature_to_image(f: f64, scale: f64) -> f64 {
    (f + 0.5) / scale - 0.5
}

/// Precomputed camera-to-scene sampling map for one view at one feature
/// scale.
#[derive(Clone, Debug)]
pub struct ProjectionGrid {
    pub rows: usize,
    pub cols: usize,
    /// Feature-map size `(height, width)` the grid samples from.
    pub source_size: (usize, usize),
    pub feature_scale: f64,
    /// Per cell `(x, y)` in feature-grid pixels, row-major over the scene grid.
    pub sample_coords: Vec<[f64; 2]>,
    pub validity_mask: Vec<bool>,
    map: Arc<SamplingMap>,
}

impl ProjectionGrid {
    /// Grid from explicit coordinates; cells outside the source bounds are
    /// forced invalid.
    pub fn from_coords(
        rows: usize,
        cols: usize,
        source_size: (usize, usize),
        feature_scale: f64,
        sample_coords: Vec<[f64; 2]>,
        validity: Vec<bool>,
    ) -> Result<Self> {
        if sample_coords.len() != rows * cols || validity.len() != rows * cols {
            return Err(Error::shape("ProjectionGrid", rows * cols, sample_coords.len()));
        }
        let (sh, sw) = source_size;
        let validity_mask: Vec<bool> = sample_coords
            .iter()
            .zip(&validity)
            .map(|(p, &v)| v && p[0] >= 0.0 && p[1] >= 0.0 && p[0] <= (sw - 1) as f64 && p[1] <= (sh - 1) as f64)
            .collect();
        let taps = sample_coords
            .iter()
            .zip(&validity_mask)
            .map(|(p, &v)| v.then(|| Taps::new(p[0], p[1], sw, sh)))
            .collect();
        let map = Arc::new(SamplingMap {
            in_h: sh,
            in_w: sw,
            out_h: rows,
            out_w: cols,
            taps,
        });
        Ok(ProjectionGrid {
            rows,
            cols,
            source_size,
            feature_scale,
            sample_coords,
            validity_mask,
            map,
        })
    }

    pub fn sampling_map(&self) -> Arc<SamplingMap> {
        Arc::clone(&self.map)
    }

    pub fn valid_count(&self) -> usize {
        self.validity_mask.iter().filter(|v| **v).count()
    }
}

/// Source feature-map size for an image downscaled by `feature_scale`.
pub fn feature_size(image_size: (usize, usize), feature_scale: f64) -> (usize, usize) {
    let h = (image_size.1 as f64 * feature_scale).round().max(1.0) as usize;
    let w = (image_size.0 as f64 * feature_scale).round().max(1.0) as usize;
    (h, w)
}

/// Project every scene cell's world point `(x, y, height)` into the camera
/// and express it in feature-grid pixels.
pub fn build_projection_grid(camera: &CameraModel, scene: &ScenePlaneGrid, feature_scale: f64) -> Result<ProjectionGrid> {
    if !(feature_scale > 0.0 && feature_scale <= 1.0) {
        return Err(Error::InvalidArgument(format!("feature_scale {feature_scale} outside (0, 1]")));
    }
    scene.validate()?;
    let (rows, cols) = scene.grid_size;
    let source = feature_size(camera.image_size, feature_scale);
    let mut coords = Vec::with_capacity(rows * cols);
    let mut valid = Vec::with_capacity(rows * cols);
    let mut any_in_front = false;
    for r in 0..rows {
        for c in 0..cols {
            match camera.project(&scene.cell_center(r, c)) {
                Some((px, _)) => {
                    any_in_front = true;
                    coords.push([image_to_feature(px.x, feature_scale), image_to_feature(px.y, feature_scale)]);
                    valid.push(true);
                }
                None => {
                    coords.push([f64::NAN, f64::NAN]);
                    valid.push(false);
                }
            }
        }
    }
    if !any_in_front {
        return Err(Error::SceneNotObserved);
    }
    ProjectionGrid::from_coords(rows, cols, source, feature_scale, coords, valid)
}

/// Bilinearly sample a camera-plane feature map onto the scene grid; invalid
/// cells are zero.
pub fn project_features(features: &FeatureMap, grid: &ProjectionGrid) -> Result<FeatureMap> {
    if features.frame != FrameOfReference::Camera {
        return Err(Error::InvalidArgument("project_features expects camera-plane features".into()));
    }
    let (c, h, w) = features.tensor.dims3()?;
    if (h, w) != grid.source_size {
        return Err(Error::shape(
            "project_features",
            format!("{}x{}", grid.source_size.0, grid.source_size.1),
            format!("{h}x{w}"),
        ));
    }
    let out = kernels::sample_forward(features.tensor.data(), c, h * w, &grid.map.taps);
    FeatureMap::new(
        Tensor::from_vec(&[c, grid.rows, grid.cols], out)?,
        features.view_id,
        features.timestamp,
        FrameOfReference::Scene,
    )
}

use nalgebra::Vector3;

use crate::error::Result;
use crate::geometry::{CameraModel, ScenePlaneGrid};

/// Three oblique cameras with complementary footprints on the grid plane.
/// Pairwise overlaps are small, so no single view sees most of the scene.
pub fn desk_rig(scene: &ScenePlaneGrid, image_size: (usize, usize), focal: f64) -> Result<Vec<CameraModel>> {
    let (w, d) = scene.extent();
    let [ox, oy] = scene.origin;
    let up = Vector3::new(0.0, 0.0, 1.0);
    // (eye x, eye y, eye z, target x, target y, focal multiplier); x and y
    // are fractions of the grid extent. Each view sees a bit under half of
    // the grid and the three together cover all of it.
    let specs = [
        (0.255, 0.40, 13.6, 0.82, 0.72, 1.37),
        (1.10, 0.73, 12.6, 0.87, 0.17, 1.05),
        (0.525, 0.62, 10.3, 0.33, 0.635, 0.78),
    ];
    specs
        .iter()
        .enumerate()
        .map(|(i, &(ex, ey, ez, tx, ty, f))| {
            let eye = Vector3::new(ox + ex * w, oy + ey * d, ez);
            let target = Vector3::new(ox + tx * w, oy + ty * d, 0.0);
            CameraModel::look_at(i, eye, target, up, f * focal, image_size)
        })
        .collect()
}

/// Per-cell visibility of the grid plane (cell centres at `scene.height`).
pub fn coverage_mask(camera: &CameraModel, scene: &ScenePlaneGrid) -> Vec<bool> {
    let (rows, cols) = scene.grid_size;
    (0..rows * cols)
        .map(|i| {
            camera
                .project(&scene.cell_center(i / cols, i % cols))
                .is_some_and(|(px, _)| camera.in_image(&px))
        })
        .collect()
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, ScenePlaneGrid};
use crate::maps::DensityMap;
use crate::tensor::Tensor;

use super::agents::AgentState;

/// Appearance of an agent in the camera images.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplatConfig {
    /// Head radius in metres; the splat std is its projected size.
    pub radius_m: f64,
    pub min_sigma_px: f64,
}

impl Default for SplatConfig {
    fn default() -> Self {
        SplatConfig {
            radius_m: 0.25,
            min_sigma_px: 0.8,
        }
    }
}

const TRUNCATE: f64 = 5.0;

/// Add a unit-mass Gaussian centred at `(cx, cy)` to a `h × w` plane (or
/// only measure it when `plane` is `None`). Returns the mass that lands
/// inside the plane.
fn splat(mut plane: Option<&mut [f64]>, w: usize, h: usize, cx: f64, cy: f64, sigma: f64, weight: f64) -> f64 {
    let r = TRUNCATE * sigma;
    let (x0, x1) = ((cx - r).floor().max(0.0), (cx + r).ceil().min(w as f64 - 1.0));
    let (y0, y1) = ((cy - r).floor().max(0.0), (cy + r).ceil().min(h as f64 - 1.0));
    if x0 > x1 || y0 > y1 {
        return 0.0;
    }
    let norm = weight / (2.0 * std::f64::consts::PI * sigma * sigma);
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut total = 0.0;
    for y in y0 as usize..=y1 as usize {
        let dy = y as f64 - cy;
        for x in x0 as usize..=x1 as usize {
            let dx = x as f64 - cx;
            let v = norm * (-(dx * dx + dy * dy) * inv).exp();
            if let Some(p) = plane.as_deref_mut() {
                p[y * w + x] += v;
            }
            total += v;
        }
    }
    total
}

/// One-channel image with a unit-mass Gaussian splat at every agent's
/// projected head point. Agents behind the camera are skipped.
pub fn render_camera_view(agents: &[AgentState], camera: &CameraModel, splat_cfg: &SplatConfig) -> Tensor {
    let (w, h) = camera.image_size;
    let mut img = vec![0.0; w * h];
    let f = camera.intrinsics[(0, 0)];
    for a in agents {
        let head = nalgebra::Vector3::new(a.x, a.y, a.height);
        if let Some((px, depth)) = camera.project(&head) {
            let sigma = (splat_cfg.radius_m * f / depth).max(splat_cfg.min_sigma_px);
            splat(Some(&mut img), w, h, px.x, px.y, sigma, 1.0);
        }
    }
    Tensor::from_vec(&[1, h, w], img).expect("image shape")
}

/// Scene-level density: one Gaussian (std `sigma_cells`) per agent inside the
/// grid, renormalized over the grid so that each contributes exactly 1.
pub fn render_scene_density(agents: &[AgentState], grid: &ScenePlaneGrid, sigma_cells: f64) -> Result<DensityMap> {
    if !(sigma_cells > 0.0) {
        return Err(Error::InvalidArgument(format!("density sigma must be positive, got {sigma_cells}")));
    }
    let (rows, cols) = grid.grid_size;
    let inside: Vec<(f64, f64)> = agents
        .iter()
        .filter(|a| grid.contains(a.x, a.y))
        .map(|a| grid.world_to_cell(a.x, a.y))
        .collect();
    let mut values = vec![0.0; rows * cols];
    for &(cx, cy) in &inside {
        let m = splat(None, cols, rows, cx, cy, sigma_cells, 1.0);
        if m > 0.0 {
            splat(Some(&mut values), cols, rows, cx, cy, sigma_cells, 1.0 / m);
        }
    }
    Ok(DensityMap {
        rows,
        cols,
        values,
        count: inside.len() as f64,
        grid: Some(*grid),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn nadir() -> CameraModel {
        CameraModel::look_at(0, Vector3::new(5.0, 5.0, 12.0), Vector3::new(5.0, 5.0, 0.0), Vector3::new(0.0, -1.0, 0.0), 40.0, (65, 49))
            .unwrap()
    }

    fn at(x: f64, y: f64) -> AgentState {
        AgentState { x, y, height: 1.7 }
    }

    #[test]
    fn interior_splat_has_unit_mass_and_centre() {
        let img = render_camera_view(&[at(5.0, 5.0)], &nadir(), &SplatConfig::default());
        assert!((img.sum() - 1.0).abs() < 1e-3);
        let (_, h, w) = img.dims3().unwrap();
        let argmax = (0..h * w).max_by(|a, b| img.data()[*a].total_cmp(&img.data()[*b])).unwrap();
        assert_eq!((argmax % w, argmax / w), (32, 24));
    }

    #[test]
    fn agent_behind_camera_is_absent() {
        let cam = nadir();
        let img = render_camera_view(&[AgentState { x: 5.0, y: 5.0, height: 13.0 }], &cam, &SplatConfig::default());
        assert_eq!(img.sum(), 0.0);
    }

    #[test]
    fn density_sums_to_count() {
        let g = ScenePlaneGrid::new([0.0, 0.0], 0.5, (20, 30), 1.7).unwrap();
        let d = render_scene_density(&[at(7.0, 5.0)], &g, 1.5).unwrap();
        assert!((d.sum() - 1.0).abs() < 1e-9);
        // Edge and outside agents: only in-grid agents count, each exactly once.
        let d = render_scene_density(&[at(0.1, 0.1), at(14.9, 9.9), at(-1.0, 3.0)], &g, 1.5).unwrap();
        assert_eq!(d.count, 2.0);
        assert!((d.sum() - 2.0).abs() < 1e-9);
        let e = render_scene_density(&[], &g, 1.5).unwrap();
        assert!(e.values.iter().all(|v| *v == 0.0));
    }
}

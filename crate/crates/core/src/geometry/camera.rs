use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole camera `x ~ K (R X + t)` with OpenCV axis conventions (x right,
/// y down, z forward). Pixel `(u, v)` has its centre at integer coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraModel {
    pub view_id: usize,
    pub intrinsics: Matrix3<f64>,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    /// `(width, height)` in pixels.
    pub image_size: (usize, usize),
}

impl CameraModel {
    pub fn new(
        view_id: usize,
        intrinsics: Matrix3<f64>,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        image_size: (usize, usize),
    ) -> Result<Self> {
        let cam = CameraModel {
            view_id,
            intrinsics,
            rotation,
            translation,
            image_size,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        let rtr = self.rotation.transpose() * self.rotation;
        if (rtr - Matrix3::identity()).abs().max() > 1e-8 || self.rotation.determinant() < 0.0 {
            return Err(Error::InvalidArgument(format!("view {}: rotation is not orthonormal", self.view_id)));
        }
        let k = &self.intrinsics;
        if !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0) {
            return Err(Error::InvalidArgument(format!("view {}: focal lengths must be positive", self.view_id)));
        }
        if k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 || k[(2, 2)] != 1.0 || k[(1, 0)] != 0.0 {
            return Err(Error::InvalidArgument(format!(
                "view {}: intrinsics must be upper-triangular with K[2,2] = 1",
                self.view_id
            )));
        }
        if !self.center().iter().all(|v| v.is_finite()) || !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(format!("view {}: non-finite camera centre", self.view_id)));
        }
        if self.image_size.0 == 0 || self.image_size.1 == 0 {
            return Err(Error::InvalidArgument(format!("view {}: empty image", self.view_id)));
        }
        Ok(())
    }

    /// Intrinsics with focal length `f` and principal point at the image centre.
    pub fn centered_intrinsics(focal: f64, image_size: (usize, usize)) -> Matrix3<f64> {
        let cx = (image_size.0 as f64 - 1.0) / 2.0;
        let cy = (image_size.1 as f64 - 1.0) / 2.0;
        Matrix3::new(focal, 0.0, cx, 0.0, focal, cy, 0.0, 0.0, 1.0)
    }

    /// Camera at `eye` looking at `target`; `up` is the world direction that
    /// should appear upward in the image.
    pub fn look_at(
        view_id: usize,
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        focal: f64,
        image_size: (usize, usize),
    ) -> Result<Self> {
        let z = (target - eye).try_normalize(1e-12).ok_or_else(|| Error::InvalidArgument("eye equals target".into()))?;
        let x = z
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidArgument("up vector parallel to viewing direction".into()))?;
        let y = z.cross(&x);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let translation = -(rotation * eye);
        CameraModel::new(view_id, Self::centered_intrinsics(focal, image_size), rotation, translation, image_size)
    }

    /// World position of the optical centre, `−Rᵀ t`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Camera-frame coordinates of a world point.
    pub fn to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * world + self.translation
    }

    /// Pixel coordinates and depth of a world point; `None` when the point is
    /// on or behind the image plane.
    pub fn project(&self, world: &Vector3<f64>) -> Option<(Vector2<f64>, f64)> {
        let pc = self.to_camera(world);
        if pc.z <= 1e-9 {
            return None;
        }
        let h = self.intrinsics * pc;
        Some((Vector2::new(h.x / h.z, h.y / h.z), pc.z))
    }

    /// Whether pixel coordinates fall inside the image (pixel centres span
    /// `[0, w−1] × [0, h−1]`).
    pub fn in_image(&self, px: &Vector2<f64>) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x <= (self.image_size.0 - 1) as f64 && px.y <= (self.image_size.1 - 1) as f64
    }

    /// Intersection of the viewing ray through `px` with the horizontal plane
    /// `z = height`.
    pub fn backproject_to_plane(&self, px: &Vector2<f64>, height: f64) -> Option<Vector3<f64>> {
        let k_inv = self.intrinsics.try_inverse()?;
        let dir_cam = k_inv * Vector3::new(px.x, px.y, 1.0);
        let dir = self.rotation.transpose() * dir_cam;
        let c = self.center();
        if dir.z.abs() < 1e-12 {
            return None;
        }
        let s = (height - c.z) / dir.z;
        (s > 0.0).then(|| c + dir * s)
    }
}

/// Regular grid on the horizontal plane `z = height`. Cell `(r, c)` covers
/// `x ∈ [ox + c·s, ox + (c+1)·s)`, `y ∈ [oy + r·s, oy + (r+1)·s)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenePlaneGrid {
    pub origin: [f64; 2],
    pub cell_size: f64,
    /// `(rows, cols)`.
    pub grid_size: (usize, usize),
    pub height: f64,
}

impl ScenePlaneGrid {
    pub fn new(origin: [f64; 2], cell_size: f64, grid_size: (usize, usize), height: f64) -> Result<Self> {
        let g = ScenePlaneGrid {
            origin,
            cell_size,
            grid_size,
            height,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cell_size > 0.0) {
            return Err(Error::InvalidArgument("cell_size must be positive".into()));
        }
        if self.grid_size.0 == 0 || self.grid_size.1 == 0 {
            return Err(Error::InvalidArgument("grid must have at least one row and column".into()));
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.grid_size.0
    }

    pub fn cols(&self) -> usize {
        self.grid_size.1
    }

    /// World extent `(width_x, depth_y)` in metres.
    pub fn extent(&self) -> (f64, f64) {
        (self.cols() as f64 * self.cell_size, self.rows() as f64 * self.cell_size)
    }

    /// World point at the centre of cell `(r, c)` on the grid plane.
    pub fn cell_center(&self, r: usize, c: usize) -> Vector3<f64> {
        Vector3::new(
            self.origin[0] + (c as f64 + 0.5) * self.cell_size,
            self.origin[1] + (r as f64 + 0.5) * self.cell_size,
            self.height,
        )
    }

    /// Continuous `(col, row)` coordinates of a world `(x, y)`, with cell
    /// centres at integers.
    pub fn world_to_cell(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.origin[0]) / self.cell_size - 0.5,
            (y - self.origin[1]) / self.cell_size - 0.5,
        )
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (w, d) = self.extent();
        x >= self.origin[0] && y >= self.origin[1] && x < self.origin[0] + w && y < self.origin[1] + d
    }
}

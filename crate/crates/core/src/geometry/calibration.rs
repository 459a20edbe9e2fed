use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::camera::{CameraModel, ScenePlaneGrid};

/// One view's calibration as stored on disk (row-major matrices).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub view_id: usize,
    pub intrinsics: [f64; 9],
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub origin: [f64; 2],
    pub cell_size: f64,
    pub rows: usize,
    pub cols: usize,
    pub height: f64,
}

/// Per-scene calibration document: the scene grid plus one record per view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub scene: SceneRecord,
    #[serde(rename = "camera")]
    pub cameras: Vec<CameraRecord>,
}

fn row_major(m: &Matrix3<f64>) -> [f64; 9] {
    let mut out = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            out[r * 3 + c] = m[(r, c)];
        }
    }
    out
}

impl From<&CameraModel> for CameraRecord {
    fn from(c: &CameraModel) -> Self {
        CameraRecord {
            view_id: c.view_id,
            intrinsics: row_major(&c.intrinsics),
            rotation: row_major(&c.rotation),
            translation: [c.translation.x, c.translation.y, c.translation.z],
            width: c.image_size.0,
            height: c.image_size.1,
        }
    }
}

impl TryFrom<&CameraRecord> for CameraModel {
    type Error = Error;

    fn try_from(r: &CameraRecord) -> Result<Self> {
        CameraModel::new(
            r.view_id,
            Matrix3::from_row_slice(&r.intrinsics),
            Matrix3::from_row_slice(&r.rotation),
            Vector3::from_row_slice(&r.translation),
            (r.width, r.height),
        )
    }
}

impl From<&ScenePlaneGrid> for SceneRecord {
    fn from(g: &ScenePlaneGrid) -> Self {
        SceneRecord {
            origin: g.origin,
            cell_size: g.cell_size,
            rows: g.grid_size.0,
            cols: g.grid_size.1,
            height: g.height,
        }
    }
}

impl TryFrom<&SceneRecord> for ScenePlaneGrid {
    type Error = Error;

    fn try_from(r: &SceneRecord) -> Result<Self> {
        ScenePlaneGrid::new(r.origin, r.cell_size, (r.rows, r.cols), r.height)
    }
}

impl CalibrationFile {
    pub fn new(scene: &ScenePlaneGrid, cameras: &[CameraModel]) -> Self {
        CalibrationFile {
            scene: scene.into(),
            cameras: cameras.iter().map(CameraRecord::from).collect(),
        }
    }

    /// Validated cameras ordered by view id, and the scene grid.
    pub fn decode(&self) -> Result<(ScenePlaneGrid, Vec<CameraModel>)> {
        let scene = ScenePlaneGrid::try_from(&self.scene)?;
        let mut cams = self.cameras.iter().map(CameraModel::try_from).collect::<Result<Vec<_>>>()?;
        cams.sort_by_key(|c| c.view_id);
        for (i, c) in cams.iter().enumerate() {
            if c.view_id != i {
                return Err(Error::Dataset(format!("camera view ids must be 0..n, found {}", c.view_id)));
            }
        }
        Ok((scene, cams))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let scene = ScenePlaneGrid::new([0.0, 0.0], 0.5, (48, 56), 1.7).unwrap();
        let cam = CameraModel::look_at(
            0,
            Vector3::new(-4.0, 12.0, 10.0),
            Vector3::new(10.0, 12.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
            60.0,
            (64, 48),
        )
        .unwrap();
        let file = CalibrationFile::new(&scene, std::slice::from_ref(&cam));
        let text = file.to_toml().unwrap();
        let back = CalibrationFile::from_toml(&text).unwrap();
        let (s2, cams) = back.decode().unwrap();
        assert_eq!(s2, scene);
        assert!((cams[0].rotation - cam.rotation).norm() < 1e-15);
    }
}

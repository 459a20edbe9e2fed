use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CalibrationFile, CameraModel, CameraRecord, ScenePlaneGrid};
use crate::maps::DensityMap;
use crate::par;
use crate::tensor::Tensor;

use super::agents::{simulate_agents, AgentConfig, AgentState, AgentTrack, HeadingMode};
use super::render::{render_camera_view, render_scene_density, SplatConfig};
use super::rig::desk_rig;
use super::schedule::{make_desync_schedule, DesyncMode, DesyncSchedule};

/// Which instants the scene-level ground truth describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GtMode {
    /// Agent positions at the reference view's capture times.
    Reference,
    /// Each agent at the mean of its positions over the capture times of the
    /// views that see it.
    UnsyncAverage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub scene: ScenePlaneGrid,
    /// Explicit calibration; the desk rig is used when absent.
    #[serde(default)]
    pub cameras: Option<Vec<CameraRecord>>,
    pub image_size: (usize, usize),
    pub focal: f64,
    /// `agents.tick` is also the grid capture times are snapped to.
    pub agents: AgentConfig,
    pub splat: SplatConfig,
    pub density_sigma: f64,
    pub n_frames: usize,
    pub frame_interval: f64,
    pub desync: DesyncMode,
    pub reference_view: usize,
    /// Re-draw the crowd every this many frames; `None` keeps one continuous
    /// crowd for the whole sequence.
    #[serde(default)]
    pub segment_frames: Option<usize>,
    pub gt_mode: GtMode,
    /// Also render every view at the reference capture times.
    pub include_synced: bool,
}

impl SimConfig {
    /// Desk-scale default: 3 views of 64×48, a 48×56 grid of 0.5 m cells and
    /// random latency of up to three frames.
    pub fn desk() -> Self {
        let scene = ScenePlaneGrid::new([0.0, 0.0], 0.5, (48, 56), 1.7).expect("valid grid");
        let (w, d) = scene.extent();
        SimConfig {
            scene,
            cameras: None,
            image_size: (64, 48),
            focal: 40.0,
            agents: AgentConfig {
                count: 40,
                speed: (1.0, 1.5),
                heading_noise: 0.2,
                heading: HeadingMode::Uniform,
                height: (1.7, 1.7),
                area: [-4.0, -4.0, w + 4.0, d + 4.0],
                tick: 0.25,
            },
            splat: SplatConfig::default(),
            density_sigma: 1.5,
            n_frames: 100,
            frame_interval: 1.0,
            desync: DesyncMode::Random { kappa: vec![3.0, 3.0] },
            reference_view: 0,
            segment_frames: None,
            gt_mode: GtMode::Reference,
            include_synced: true,
        }
    }

    pub fn n_views(&self) -> usize {
        self.cameras.as_ref().map_or(3, Vec::len)
    }

    pub fn camera_models(&self) -> Result<Vec<CameraModel>> {
        match &self.cameras {
            Some(recs) => {
                let file = CalibrationFile {
                    scene: (&self.scene).into(),
                    cameras: recs.clone(),
                };
                Ok(file.decode()?.1)
            }
            None => desk_rig(&self.scene, self.image_size, self.focal),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub n_views: usize,
    pub n_frames: usize,
    pub frame_interval: f64,
    pub reference_view: usize,
    pub image_width: usize,
    pub image_height: usize,
    pub gt_mode: GtMode,
    pub has_synced: bool,
    pub seed: u64,
    pub density_sigma: f64,
    /// Ground-truth count per reference frame.
    pub counts: Vec<f64>,
}

/// A multi-view sequence with its calibration, schedule and ground truth.
/// Images are kept in f32, the on-disk precision.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub scene: ScenePlaneGrid,
    pub cameras: Vec<CameraModel>,
    pub schedule: DesyncSchedule,
    /// `frames[view][k]`: view `view` captured at reference time `k` plus its
    /// offset.
    pub frames: Vec<Vec<Vec<f32>>>,
    /// `synced[view][k]`: the same view captured exactly at reference time `k`.
    pub synced: Option<Vec<Vec<Vec<f32>>>>,
    pub density: Vec<Vec<f32>>,
}

fn to_f32(t: &Tensor) -> Vec<f32> {
    t.data().iter().map(|v| *v as f32).collect()
}

fn image_tensor(data: &[f32], w: usize, h: usize) -> Tensor {
    Tensor::from_vec(&[1, h, w], data.iter().map(|v| *v as f64).collect()).expect("image shape")
}

impl Dataset {
    pub fn n_views(&self) -> usize {
        self.manifest.n_views
    }

    pub fn n_frames(&self) -> usize {
        self.manifest.n_frames
    }

    pub fn image(&self, view: usize, k: usize) -> Tensor {
        image_tensor(&self.frames[view][k], self.manifest.image_width, self.manifest.image_height)
    }

    pub fn synced_image(&self, view: usize, k: usize) -> Result<Tensor> {
        let s = self
            .synced
            .as_ref()
            .ok_or_else(|| Error::Dataset("dataset has no synchronized counterpart frames".into()))?;
        Ok(image_tensor(&s[view][k], self.manifest.image_width, self.manifest.image_height))
    }

    pub fn density(&self, k: usize) -> DensityMap {
        let (rows, cols) = self.scene.grid_size;
        DensityMap {
            rows,
            cols,
            values: self.density[k].iter().map(|v| *v as f64).collect(),
            count: self.manifest.counts[k],
            grid: Some(self.scene),
        }
    }

    /// Copy whose unsynchronized frames are replaced by the synchronized ones
    /// and whose schedule is all zeros.
    pub fn synchronized_view(&self) -> Result<Dataset> {
        let synced = self
            .synced
            .clone()
            .ok_or_else(|| Error::Dataset("dataset has no synchronized counterpart frames".into()))?;
        let mut ds = self.clone();
        ds.frames = synced;
        for row in ds.schedule.offsets.iter_mut() {
            row.fill(0.0);
        }
        ds.schedule.mode = match &ds.schedule.mode {
            DesyncMode::Constant { tau } => DesyncMode::Constant { tau: vec![0.0; tau.len()] },
            DesyncMode::Random { kappa } => DesyncMode::Random { kappa: kappa.clone() },
        };
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.manifest;
        let n = m.n_views;
        if self.cameras.len() != n {
            return Err(Error::Dataset(format!("{} cameras for {n} views", self.cameras.len())));
        }
        for c in &self.cameras {
            if c.image_size != (m.image_width, m.image_height) {
                return Err(Error::Dataset(format!("view {} image size differs from the manifest", c.view_id)));
            }
        }
        self.schedule.validate()?;
        if self.schedule.n_views() != n || self.schedule.n_frames() != m.n_frames || self.schedule.reference_view != m.reference_view {
            return Err(Error::Dataset("schedule does not match the manifest".into()));
        }
        let px = m.image_width * m.image_height;
        let check_frames = |f: &Vec<Vec<Vec<f32>>>, what: &str| -> Result<()> {
            if f.len() != n || f.iter().any(|v| v.len() != m.n_frames || v.iter().any(|img| img.len() != px)) {
                return Err(Error::Dataset(format!("{what} frames do not match {n} views × {} frames", m.n_frames)));
            }
            Ok(())
        };
        check_frames(&self.frames, "unsynchronized")?;
        if let Some(s) = &self.synced {
            check_frames(s, "synchronized")?;
        }
        if self.synced.is_some() != m.has_synced {
            return Err(Error::Dataset("has_synced flag disagrees with the stored frames".into()));
        }
        if self.density.len() != m.n_frames || m.counts.len() != m.n_frames {
            return Err(Error::Dataset(format!(
                "{} ground-truth maps and {} counts for {} reference frames",
                self.density.len(),
                m.counts.len(),
                m.n_frames
            )));
        }
        let cells = self.scene.rows() * self.scene.cols();
        for (k, d) in self.density.iter().enumerate() {
            if d.len() != cells {
                return Err(Error::Dataset(format!("density {k} has {} cells, grid has {cells}", d.len())));
            }
            if d.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::Dataset(format!("density {k} has negative or non-finite values")));
            }
            let sum: f64 = d.iter().map(|v| *v as f64).sum();
            if (sum - m.counts[k]).abs() > 1e-3 * m.counts[k].max(1.0) {
                return Err(Error::Dataset(format!("density {k} sums to {sum}, count is {}", m.counts[k])));
            }
        }
        Ok(())
    }
}

fn derive_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03)) ^ stream
}

/// Agent tracks for one crowd segment, with tick 0 at `t_start`.
struct Segment {
    t_start: f64,
    tracks: Vec<AgentTrack>,
}

impl Segment {
    fn states(&self, t: f64, tick: f64) -> Vec<AgentState> {
        let idx = ((t - self.t_start) / tick).round().max(0.0) as usize;
        super::agents::states_at(&self.tracks, idx)
    }
}

/// Run the whole simulation: schedule, crowd, renderings and ground truth.
pub fn generate_dataset(config: &SimConfig, seed: u64) -> Result<Dataset> {
    config.scene.validate()?;
    config.agents.validate()?;
    if config.n_frames == 0 {
        return Err(Error::InvalidArgument("n_frames must be at least 1".into()));
    }
    let cameras = config.camera_models()?;
    let n_views = cameras.len();
    let (iw, ih) = cameras[0].image_size;
    if cameras.iter().any(|c| c.image_size != (iw, ih)) {
        return Err(Error::InvalidArgument("all views must share one image size".into()));
    }
    let schedule = make_desync_schedule(
        &config.desync,
        config.frame_interval,
        n_views,
        config.n_frames,
        config.reference_view,
        derive_seed(seed, 1),
    )?;
    let tick = config.agents.tick;
    let seg_len = config.segment_frames.unwrap_or(config.n_frames).max(1);
    let max_off = schedule.max_abs_offset();
    let n_segments = config.n_frames.div_ceil(seg_len);
    let segments = (0..n_segments)
        .map(|s| {
            let first = s * seg_len;
            let last = ((s + 1) * seg_len).min(config.n_frames) - 1;
            let t_start = ((first as f64 * config.frame_interval - max_off) / tick).floor() * tick - tick;
            let t_end = last as f64 * config.frame_interval + max_off + tick;
            let ticks = ((t_end - t_start) / tick).ceil() as usize + 2;
            Ok(Segment {
                t_start,
                tracks: simulate_agents(&config.agents, derive_seed(seed, 100 + s as u64), ticks)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    struct FrameOut {
        views: Vec<Vec<f32>>,
        synced: Option<Vec<Vec<f32>>>,
        density: Vec<f32>,
        count: f64,
    }
    let frames = par::map_range(config.n_frames, |k| -> Result<FrameOut> {
        let seg = &segments[k / seg_len];
        let t_ref = k as f64 * config.frame_interval;
        let at_capture: Vec<Vec<AgentState>> = (0..n_views)
            .map(|i| seg.states(schedule.capture_time(i, k), tick))
            .collect();
        let views = cameras
            .iter()
            .zip(&at_capture)
            .map(|(c, s)| to_f32(&render_camera_view(s, c, &config.splat)))
            .collect();
        let at_ref = seg.states(t_ref, tick);
        let synced = config
            .include_synced
            .then(|| cameras.iter().map(|c| to_f32(&render_camera_view(&at_ref, c, &config.splat))).collect());
        let gt_states = match config.gt_mode {
            GtMode::Reference => at_ref,
            GtMode::UnsyncAverage => unsync_average(&at_ref, &at_capture, &cameras),
        };
        let d = render_scene_density(&gt_states, &config.scene, config.density_sigma)?;
        Ok(FrameOut {
            views,
            synced,
            density: d.values.iter().map(|v| *v as f32).collect(),
            count: d.count,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut views = vec![Vec::with_capacity(config.n_frames); n_views];
    let mut synced = config.include_synced.then(|| vec![Vec::with_capacity(config.n_frames); n_views]);
    let mut density = Vec::with_capacity(config.n_frames);
    let mut counts = Vec::with_capacity(config.n_frames);
    for f in frames {
        for (i, img) in f.views.into_iter().enumerate() {
            views[i].push(img);
        }
        if let (Some(s), Some(fs)) = (synced.as_mut(), f.synced) {
            for (i, img) in fs.into_iter().enumerate() {
                s[i].push(img);
            }
        }
        density.push(f.density);
        counts.push(f.count);
    }
    let ds = Dataset {
        manifest: DatasetManifest {
            format_version: 1,
            n_views,
            n_frames: config.n_frames,
            frame_interval: config.frame_interval,
            reference_view: config.reference_view,
            image_width: iw,
            image_height: ih,
            gt_mode: config.gt_mode,
            has_synced: config.include_synced,
            seed,
            density_sigma: config.density_sigma,
            counts,
        },
        scene: config.scene,
        cameras,
        schedule,
        frames: views,
        synced,
        density,
    };
    ds.validate()?;
    Ok(ds)
}

/// Ground-truth positions averaged over the capture times of the views in
/// which each agent is visible; agents seen by no view keep their reference
/// position.
fn unsync_average(at_ref: &[AgentState], at_capture: &[Vec<AgentState>], cameras: &[CameraModel]) -> Vec<AgentState> {
    at_ref
        .iter()
        .enumerate()
        .map(|(a, r)| {
            let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
            for (cam, states) in cameras.iter().zip(at_capture) {
                let s = states[a];
                let head = nalgebra::Vector3::new(s.x, s.y, s.height);
                if cam.project(&head).is_some_and(|(px, _)| cam.in_image(&px)) {
                    sx += s.x;
                    sy += s.y;
                    n += 1;
                }
            }
            if n == 0 {
                *r
            } else {
                AgentState {
                    x: sx / n as f64,
                    y: sy / n as f64,
                    height: r.height,
                }
            }
        })
        .collect()
}

const MANIFEST: &str = "manifest.toml";
const CAMERAS: &str = "cameras.toml";
const SCHEDULE: &str = "schedule.toml";

fn frame_path(dir: &Path, view: usize, k: usize, synced: bool) -> PathBuf {
    let stem = if synced { "sync" } else { "frame" };
    dir.join(format!("view_{view}")).join(format!("{stem}_{k}.f32"))
}

fn density_path(dir: &Path, k: usize) -> PathBuf {
    dir.join("gt").join(format!("density_{k}.f32"))
}

pub fn write_f32(path: &Path, data: &[f32]) -> Result<()> {
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_f32(path: &Path, expected_len: usize) -> Result<Vec<f32>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = std::fs::read(path)?;
    if bytes.len() != expected_len * 4 {
        return Err(Error::Corrupt {
            what: path.display().to_string(),
            detail: format!("{} bytes, expected {}", bytes.len(), expected_len * 4),
        });
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
}

pub fn export_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    ds.validate()?;
    std::fs::create_dir_all(dir.join("gt"))?;
    for i in 0..ds.n_views() {
        std::fs::create_dir_all(dir.join(format!("view_{i}")))?;
    }
    std::fs::write(dir.join(MANIFEST), toml::to_string_pretty(&ds.manifest)?)?;
    CalibrationFile::new(&ds.scene, &ds.cameras).save(&dir.join(CAMERAS))?;
    std::fs::write(dir.join(SCHEDULE), toml::to_string_pretty(&ds.schedule)?)?;
    for (i, view) in ds.frames.iter().enumerate() {
        for (k, img) in view.iter().enumerate() {
            write_f32(&frame_path(dir, i, k, false), img)?;
        }
    }
    if let Some(s) = &ds.synced {
        for (i, view) in s.iter().enumerate() {
            for (k, img) in view.iter().enumerate() {
                write_f32(&frame_path(dir, i, k, true), img)?;
            }
        }
    }
    for (k, d) in ds.density.iter().enumerate() {
        write_f32(&density_path(dir, k), d)?;
    }
    Ok(())
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    toml::from_str(&std::fs::read_to_string(path)?).map_err(|e| Error::Corrupt {
        what: path.display().to_string(),
        detail: e.to_string(),
    })
}

fn count_files(dir: &Path, prefix: &str) -> Result<usize> {
    if !dir.is_dir() {
        return Ok(0);
    }
    let mut n = 0;
    for entry in std::fs::read_dir(dir)? {
        let name = entry?.file_name();
        let name = name.to_string_lossy();
        if name.starts_with(prefix) && name.ends_with(".f32") {
            n += 1;
        }
    }
    Ok(n)
}

pub fn ingest_dataset(dir: &Path) -> Result<Dataset> {
    let manifest: DatasetManifest = read_toml(&dir.join(MANIFEST))?;
    let (scene, cameras) = CalibrationFile::load(&dir.join(CAMERAS))?.decode()?;
    let schedule: DesyncSchedule = read_toml(&dir.join(SCHEDULE))?;
    let ref_frames = count_files(&dir.join(format!("view_{}", manifest.reference_view)), "frame_")?;
    let gt_frames = count_files(&dir.join("gt"), "density_")?;
    if gt_frames != ref_frames || ref_frames != manifest.n_frames {
        return Err(Error::Dataset(format!(
            "{gt_frames} ground-truth maps for {ref_frames} reference frames (manifest says {})",
            manifest.n_frames
        )));
    }
    if cameras.len() != manifest.n_views {
        return Err(Error::Dataset(format!("{} cameras for {} views", cameras.len(), manifest.n_views)));
    }
    let px = manifest.image_width * manifest.image_height;
    let load_frames = |synced: bool| -> Result<Vec<Vec<Vec<f32>>>> {
        (0..manifest.n_views)
            .map(|i| (0..manifest.n_frames).map(|k| read_f32(&frame_path(dir, i, k, synced), px)).collect())
            .collect()
    };
    let frames = load_frames(false)?;
    let synced = if manifest.has_synced { Some(load_frames(true)?) } else { None };
    let cells = scene.rows() * scene.cols();
    let density = (0..manifest.n_frames)
        .map(|k| read_f32(&density_path(dir, k), cells))
        .collect::<Result<Vec<_>>>()?;
    let ds = Dataset {
        manifest,
        scene,
        cameras,
        schedule,
        frames,
        synced,
        density,
    };
    ds.validate()?;
    Ok(ds)
}

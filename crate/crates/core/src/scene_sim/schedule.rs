use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How capture-time offsets are drawn. Values are listed for the
/// non-reference views in increasing view order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DesyncMode {
    /// `δᵢ,ₖ = τᵢ` for every frame.
    Constant { tau: Vec<f64> },
    /// `δᵢ,ₖ ~ U(−κᵢ, κᵢ)` independently per frame and view.
    Random { kappa: Vec<f64> },
}

/// Per-view, per-frame capture-time offsets relative to the reference view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesyncSchedule {
    /// Seconds between consecutive reference frames.
    pub frame_interval: f64,
    pub reference_view: usize,
    pub mode: DesyncMode,
    /// `offsets[i][k]` in seconds; the reference row is all zeros.
    pub offsets: Vec<Vec<f64>>,
}

impl DesyncSchedule {
    pub fn n_views(&self) -> usize {
        self.offsets.len()
    }

    pub fn n_frames(&self) -> usize {
        self.offsets.first().map_or(0, Vec::len)
    }

    /// Capture time of view `i`, frame `k`, with the reference frame `k` at
    /// `k·Δt`.
    pub fn capture_time(&self, view: usize, frame: usize) -> f64 {
        frame as f64 * self.frame_interval + self.offsets[view][frame]
    }

    /// Offset expressed in frames.
    pub fn offset_frames(&self, view: usize, frame: usize) -> f64 {
        self.offsets[view][frame] / self.frame_interval
    }

    pub fn max_abs_offset(&self) -> f64 {
        self.offsets.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_views();
        if self.reference_view >= n {
            return Err(Error::Dataset(format!("reference view {} out of range", self.reference_view)));
        }
        if !(self.frame_interval > 0.0) {
            return Err(Error::Dataset("frame interval must be positive".into()));
        }
        let frames = self.n_frames();
        if self.offsets.iter().any(|r| r.len() != frames) {
            return Err(Error::Dataset("ragged offset table".into()));
        }
        if self.offsets[self.reference_view].iter().any(|v| *v != 0.0) {
            return Err(Error::Dataset("reference view offsets must be zero".into()));
        }
        let params = mode_params(&self.mode);
        if params.len() + 1 != n {
            return Err(Error::Dataset(format!("{} latency values for {} non-reference views", params.len(), n - 1)));
        }
        for (j, i) in non_reference(n, self.reference_view).enumerate() {
            let ok = match &self.mode {
                DesyncMode::Constant { tau } => self.offsets[i].iter().all(|v| *v == tau[j]),
                DesyncMode::Random { kappa } => self.offsets[i].iter().all(|v| v.abs() <= kappa[j]),
            };
            if !ok {
                return Err(Error::Dataset(format!("view {i} offsets violate the {:?} schedule", self.mode)));
            }
        }
        Ok(())
    }
}

fn mode_params(mode: &DesyncMode) -> &[f64] {
    match mode {
        DesyncMode::Constant { tau } => tau,
        DesyncMode::Random { kappa } => kappa,
    }
}

fn non_reference(n: usize, reference: usize) -> impl Iterator<Item = usize> {
    (0..n).filter(move |&i| i != reference)
}

pub fn make_desync_schedule(
    mode: &DesyncMode,
    frame_interval: f64,
    n_views: usize,
    n_frames: usize,
    reference_view: usize,
    seed: u64,
) -> Result<DesyncSchedule> {
    if n_views == 0 || reference_view >= n_views {
        return Err(Error::InvalidArgument(format!("reference view {reference_view} not among {n_views} views")));
    }
    if !(frame_interval > 0.0) {
        return Err(Error::InvalidArgument("frame interval must be positive".into()));
    }
    let params = mode_params(mode);
    if params.len() + 1 != n_views {
        return Err(Error::InvalidArgument(format!(
            "expected {} latency values (one per non-reference view), got {}",
            n_views - 1,
            params.len()
        )));
    }
    if params.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("latency values must be finite".into()));
    }
    if let DesyncMode::Random { kappa } = mode {
        if let Some(k) = kappa.iter().find(|k| **k < 0.0) {
            return Err(Error::InvalidArgument(format!("kappa must be non-negative, got {k}")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut offsets = vec![vec![0.0; n_frames]; n_views];
    for (j, i) in non_reference(n_views, reference_view).enumerate() {
        match mode {
            DesyncMode::Constant { tau } => offsets[i].fill(tau[j]),
            DesyncMode::Random { kappa } => {
                for v in offsets[i].iter_mut() {
                    *v = if kappa[j] > 0.0 { rng.random_range(-kappa[j]..=kappa[j]) } else { 0.0 };
                }
            }
        }
    }
    Ok(DesyncSchedule {
        frame_interval,
        reference_view,
        mode: mode.clone(),
        offsets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pets_constant_offsets_are_35_frames() {
        let s = make_desync_schedule(&DesyncMode::Constant { tau: vec![5.0, -5.0] }, 1.0 / 7.0, 3, 10, 0, 0).unwrap();
        s.validate().unwrap();
        for k in 0..10 {
            assert!((s.offset_frames(1, k) - 35.0).abs() < 1e-9);
            assert!((s.offset_frames(2, k) + 35.0).abs() < 1e-9);
            assert_eq!(s.offsets[0][k], 0.0);
        }
    }

    #[test]
    fn random_offsets_bounded_and_zero_kappa_syncs() {
        let s = make_desync_schedule(&DesyncMode::Random { kappa: vec![3.0, 3.0] }, 1.0, 3, 500, 0, 4).unwrap();
        s.validate().unwrap();
        assert!(s.max_abs_offset() <= 3.0);
        assert!(s.max_abs_offset() > 2.5);
        let z = make_desync_schedule(&DesyncMode::Random { kappa: vec![0.0, 0.0] }, 1.0, 3, 20, 0, 4).unwrap();
        assert_eq!(z.max_abs_offset(), 0.0);
        assert!(make_desync_schedule(&DesyncMode::Random { kappa: vec![-1.0, 0.0] }, 1.0, 3, 5, 0, 0).is_err());
    }
}

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::par;

use super::camera::CameraModel;
use super::projection::feature_to_image;

/// Rank-2 fundamental matrix with `x_otherᵀ F x_ref = 0`, normalized to unit
/// Frobenius norm.
#[derive(Clone, Debug, PartialEq)]
pub struct FundamentalMatrix {
    pub matrix: Matrix3<f64>,
    /// `(reference id, other id)`.
    pub view_pair: (usize, usize),
}

impl FundamentalMatrix {
    /// Epipolar line in the other view induced by a reference pixel.
    pub fn line_in_other(&self, u: f64, v: f64) -> Vector3<f64> {
        self.matrix * Vector3::new(u, v, 1.0)
    }

    /// Algebraic residual `x'ᵀ F x`.
    pub fn residual(&self, x: (f64, f64), x_other: (f64, f64)) -> f64 {
        Vector3::new(x_other.0, x_other.1, 1.0).dot(&(self.matrix * Vector3::new(x.0, x.1, 1.0)))
    }

    /// Ratio of smallest to largest singular value.
    pub fn singular_ratio(&self) -> f64 {
        let sv = self.matrix.singular_values();
        let max = sv.max();
        if max == 0.0 {
            return 0.0;
        }
        sv.min() / max
    }

    pub fn transposed(&self) -> FundamentalMatrix {
        FundamentalMatrix {
            matrix: self.matrix.transpose(),
            view_pair: (self.view_pair.1, self.view_pair.0),
        }
    }
}

fn skew(t: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0)
}

/// `F = K'⁻ᵀ [t_rel]ₓ R_rel K⁻¹` from two calibrated cameras.
pub fn fundamental_from_cameras(reference: &CameraModel, other: &CameraModel) -> Result<FundamentalMatrix> {
    let baseline = (reference.center() - other.center()).norm();
    let scale = reference.center().norm().max(other.center().norm()).max(1.0);
    if baseline <= 1e-12 * scale {
        return Err(Error::DegenerateEpipolar);
    }
    let r_rel = other.rotation * reference.rotation.transpose();
    let t_rel = other.translation - r_rel * reference.translation;
    let essential = skew(&t_rel) * r_rel;
    let k_inv = reference.intrinsics.try_inverse().ok_or(Error::DegenerateEpipolar)?;
    let k_other_inv_t = other
        .intrinsics
        .try_inverse()
        .ok_or(Error::DegenerateEpipolar)?
        .transpose();
    let f = k_other_inv_t * essential * k_inv;
    let norm = f.norm();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::DegenerateEpipolar);
    }
    // Project onto the rank-2 manifold to clean up round-off.
    let svd = f.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut s = svd.singular_values;
    let min_idx = s.imin();
    s[min_idx] = 0.0;
    let f2 = u * Matrix3::from_diagonal(&s) * v_t;
    let f2 = f2 / f2.norm();
    Ok(FundamentalMatrix {
        matrix: f2,
        view_pair: (reference.view_id, other.view_id),
    })
}

/// Epipolar-guided weights between a source grid `(H, W)` and a destination
/// grid `(H', W')`, stored destination-major: `weights[q * H·W + p]` pairs
/// source location `p` with destination location `q`, matching the layout of
/// a correlation volume.
#[derive(Clone, Debug, PartialEq)]
pub struct EpipolarMask {
    pub weights: Vec<f64>,
    pub sigma: f64,
    pub src_size: (usize, usize),
    pub dst_size: (usize, usize),
}

impl EpipolarMask {
    pub fn weight(&self, src: (usize, usize), dst: (usize, usize)) -> f64 {
        let p = src.1 * self.src_size.1 + src.0;
        let q = dst.1 * self.dst_size.1 + dst.0;
        self.weights[q * self.src_size.0 * self.src_size.1 + p]
    }

    pub fn all_ones(src_size: (usize, usize), dst_size: (usize, usize)) -> Self {
        EpipolarMask {
            weights: vec![1.0; src_size.0 * src_size.1 * dst_size.0 * dst_size.1],
            sigma: f64::INFINITY,
            src_size,
            dst_size,
        }
    }
}

/// Gaussian of the perpendicular distance (destination feature pixels) from
/// each destination location to the epipolar line of each source location.
/// Coordinates `(x, y)` index columns and rows; sizes are `(H, W)`.
pub fn build_epipolar_mask(
    f: &FundamentalMatrix,
    src_size: (usize, usize),
    dst_size: (usize, usize),
    sigma: f64,
    feature_scale: f64,
) -> Result<EpipolarMask> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    if !(feature_scale > 0.0) {
        return Err(Error::InvalidArgument(format!("feature_scale must be positive, got {feature_scale}")));
    }
    let (h, w) = src_size;
    let (ho, wo) = dst_size;
    if h == 0 || w == 0 || ho == 0 || wo == 0 {
        return Err(Error::InvalidArgument("mask sizes must be at least 1".into()));
    }
    let p_count = h * w;
    let lines: Vec<Option<Vector3<f64>>> = (0..p_count)
        .map(|p| {
            let u = feature_to_image((p % w) as f64, feature_scale);
            let v = feature_to_image((p / w) as f64, feature_scale);
            let l = f.line_in_other(u, v);
            let n = (l.x * l.x + l.y * l.y).sqrt();
            (n > 1e-15).then(|| l / n)
        })
        .collect();
    let inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);
    let mut weights = vec![0.0; ho * wo * p_count];
    par::for_each_chunk_mut(&mut weights, p_count, |q, row| {
        let u = feature_to_image((q % wo) as f64, feature_scale);
        let v = feature_to_image((q / wo) as f64, feature_scale);
        for (wt, line) in row.iter_mut().zip(&lines) {
            *wt = match line {
                // Image-pixel distance scaled into destination feature pixels.
                Some(l) => {
                    let d = (l.x * u + l.y * v + l.z).abs() * feature_scale;
                    (-d * d * inv_two_sigma2).exp()
                }
                // Source at the epipole: no constraint.
                None => 1.0,
            };
        }
    });
    Ok(EpipolarMask {
        weights,
        sigma,
        src_size,
        dst_size,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rectified_pair() -> (CameraModel, CameraModel) {
        let k = CameraModel::centered_intrinsics(40.0, (16, 12));
        let r = Matrix3::identity();
        let a = CameraModel::new(0, k, r, Vector3::zeros(), (16, 12)).unwrap();
        let b = CameraModel::new(1, k, r, Vector3::new(-1.0, 0.0, 0.0), (16, 12)).unwrap();
        (a, b)
    }

    #[test]
    fn rectified_lines_are_horizontal() {
        let (a, b) = rectified_pair();
        let f = fundamental_from_cameras(&a, &b).unwrap();
        for y in [0.0, 3.0, 7.5] {
            let l = f.line_in_other(4.0, y);
            assert!(l.x.abs() < 1e-12);
            assert!((-l.z / l.y - y).abs() < 1e-9);
        }
        assert!(f.singular_ratio() < 1e-6);
        assert!((f.matrix.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rectified_mask_gaussian_values() {
        let (a, b) = rectified_pair();
        let f = fundamental_from_cameras(&a, &b).unwrap();
        let m = build_epipolar_mask(&f, (12, 16), (12, 16), 1.0, 1.0).unwrap();
        assert!((m.weight((3, 5), (9, 5)) - 1.0).abs() < 1e-12);
        assert!((m.weight((3, 5), (9, 7)) - (-2.0f64).exp()).abs() < 1e-9);
        assert!((m.weight((3, 5), (9, 3)) - (-2.0f64).exp()).abs() < 1e-9);
        assert!(m.weight((3, 5), (0, 10)) < 1e-3);
    }

    #[test]
    fn coincident_centres_are_degenerate() {
        let (a, _) = rectified_pair();
        let mut b = a.clone();
        b.view_id = 1;
        assert!(matches!(fundamental_from_cameras(&a, &b), Err(Error::DegenerateEpipolar)));
    }

    #[test]
    fn swapped_views_transpose() {
        let (a, b) = rectified_pair();
        let fab = fundamental_from_cameras(&a, &b).unwrap().matrix;
        let fba = fundamental_from_cameras(&b, &a).unwrap().matrix;
        let d1 = (fab.transpose() - fba).norm();
        let d2 = (fab.transpose() + fba).norm();
        assert!(d1.min(d2) < 1e-9);
    }

    #[test]
    fn non_positive_sigma_rejected() {
        let (a, b) = rectified_pair();
        let f = fundamental_from_cameras(&a, &b).unwrap();
        assert!(build_epipolar_mask(&f, (2, 2), (2, 2), 0.0, 1.0).is_err());
        assert!(build_epipolar_mask(&f, (2, 2), (2, 2), -1.0, 1.0).is_err());
    }
}

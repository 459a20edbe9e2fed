//! Oracle suites shared by the acceptance tests and `viewsync selftest`.
//! Each check compares the library against an independent computation.

use std::time::Instant;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autograd::gradcheck;
use crate::error::Result;
use crate::geometry::{build_epipolar_mask, build_projection_grid, fundamental_from_cameras, CameraModel, ScenePlaneGrid};
use crate::maps::{FeatureMap, MotionFlow};
use crate::neural_blocks::{run_block, upsample_flow, ArchConfig, ModelParameters};
use crate::pipeline::count_metrics;
use crate::scene_sim::{generate_dataset, make_desync_schedule, DesyncMode, SimConfig};
use crate::sync::{compose_multiscale, match_correlation, warp};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub suite: &'static str,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub suite: &'static str,
    pub checks: Vec<Check>,
    pub seconds: f64,
    pub budget_seconds: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed) && self.seconds <= self.budget_seconds
    }
}

struct Recorder {
    suite: &'static str,
    checks: Vec<Check>,
}

impl Recorder {
    fn new(suite: &'static str) -> Self {
        Recorder { suite, checks: Vec::new() }
    }

    fn check(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(Check {
            suite: self.suite,
            name: name.to_string(),
            passed,
            detail,
        });
    }

    /// `value < bound`, reporting the value.
    fn below(&mut self, name: &str, value: f64, bound: f64) {
        self.check(name, value < bound, format!("{value:.3e} (bound {bound:.0e})"));
    }

    fn result(&mut self, name: &str, r: Result<()>) {
        match r {
            Ok(()) => self.check(name, true, "ok".into()),
            Err(e) => self.check(name, false, e.to_string()),
        }
    }

    fn finish(self, start: Instant, budget: f64) -> SuiteReport {
        SuiteReport {
            suite: self.suite,
            checks: self.checks,
            seconds: start.elapsed().as_secs_f64(),
            budget_seconds: budget,
        }
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

fn random_camera(rng: &mut ChaCha8Rng, id: usize) -> CameraModel {
    loop {
        let eye = Vector3::new(rng.random_range(-15.0..15.0), rng.random_range(-15.0..15.0), rng.random_range(4.0..12.0));
        let target = Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), 0.0);
        if let Ok(c) = CameraModel::look_at(id, eye, target, Vector3::new(0.0, 0.0, 1.0), rng.random_range(30.0..80.0), (64, 48)) {
            return c;
        }
    }
}

/// Fundamental-matrix residuals and projection grids against direct
/// point projection.
pub fn geometry_suite() -> SuiteReport {
    let start = Instant::now();
    let mut r = Recorder::new("geometry");
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    let mut n_corr = 0;
    let mut worst_singular: f64 = 0.0;
    for _ in 0..20 {
        let a = random_camera(&mut rng, 0);
        let b = random_camera(&mut rng, 1);
        let Ok(f) = fundamental_from_cameras(&a, &b) else { continue };
        worst_singular = worst_singular.max(f.singular_ratio());
        let mut got = 0;
        while got < 60 {
            let x = Vector3::new(rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0), rng.random_range(0.0..2.0));
            // Independent projection: K (R X + t) written out by hand.
            let proj = |c: &CameraModel| {
                let pc = c.rotation * x + c.translation;
                (pc.z > 0.1).then(|| {
                    let h = c.intrinsics * pc;
                    (h.x / h.z, h.y / h.z)
                })
            };
            if let (Some(pa), Some(pb)) = (proj(&a), proj(&b)) {
                worst = worst.max(f.residual(pa, pb).abs());
                got += 1;
                n_corr += 1;
            }
        }
    }
    r.check("fundamental correspondences >= 1000", n_corr >= 1000, format!("{n_corr}"));
    r.below("fundamental residual |x'Fx|", worst, 1e-6);
    r.below("fundamental rank 2 (s3/s1)", worst_singular, 1e-9);

    let scene = ScenePlaneGrid::new([-6.0, -5.0], 0.5, (20, 24), 1.7).expect("grid");
    let mut worst_px: f64 = 0.0;
    let mut cells = 0;
    for view in 0..4 {
        let cam = random_camera(&mut rng, view);
        for scale in [1.0, 0.5, 0.25] {
            let Ok(grid) = build_projection_grid(&cam, &scene, scale) else { continue };
            let k: Matrix3<f64> = cam.intrinsics;
            for row in 0..scene.rows() {
                for col in 0..scene.cols() {
                    let i = row * scene.cols() + col;
                    if !grid.validity_mask[i] {
                        continue;
                    }
                    let xw = Vector3::new(
                        scene.origin[0] + (col as f64 + 0.5) * scene.cell_size,
                        scene.origin[1] + (row as f64 + 0.5) * scene.cell_size,
                        scene.height,
                    );
                    let h = k * (cam.rotation * xw + cam.translation);
                    let (u, v) = (h.x / h.z, h.y / h.z);
                    let (fu, fv) = ((u + 0.5) * scale - 0.5, (v + 0.5) * scale - 0.5);
                    let p = grid.sample_coords[i];
                    worst_px = worst_px.max((p[0] - fu).abs()).max((p[1] - fv).abs());
                    cells += 1;
                }
            }
        }
    }
    r.check("projection cells compared", cells > 500, format!("{cells}"));
    r.below("projection grid vs point projection (px)", worst_px, 1e-6);
    r.finish(start, 10.0)
}

/// Correlation against a brute-force loop, warp fixed points and epipolar
/// suppression.
pub fn matching_suite() -> SuiteReport {
    let start = Instant::now();
    let mut r = Recorder::new("matching");
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    for &(c, h, w, ho, wo) in &[(3, 6, 7, 5, 8), (1, 8, 8, 8, 8), (4, 2, 3, 7, 1)] {
        let a = random_tensor(&mut rng, &[c, h, w]);
        let b = random_tensor(&mut rng, &[c, ho, wo]);
        let v = match_correlation(&FeatureMap::camera(a.clone(), 0).unwrap(), &FeatureMap::camera(b.clone(), 1).unwrap(), true)
            .expect("correlation");
        for y in 0..h {
            for x in 0..w {
                for yo in 0..ho {
                    for xo in 0..wo {
                        let mut s = 0.0;
                        for ci in 0..c {
                            s += a.at3(ci, y, x) * b.at3(ci, yo, xo);
                        }
                        worst = worst.max((v.score((x, y), (xo, yo)) - s / c as f64).abs());
                    }
                }
            }
        }
    }
    r.below("correlation vs brute force", worst, 1e-6);

    let f = random_tensor(&mut rng, &[2, 5, 6]);
    let fm = FeatureMap::camera(f.clone(), 1).unwrap();
    let id = warp(&fm, &MotionFlow::zeros(5, 6, (0, 1))).unwrap();
    r.check("warp zero flow is identity", id.tensor == f, String::new());
    let shifted = warp(&fm, &MotionFlow::constant(5, 6, 2.0, -1.0, (0, 1))).unwrap();
    let mut ok = true;
    for c in 0..2 {
        for y in 0..5 {
            for x in 0..6 {
                let expect = if x + 2 < 6 && y >= 1 { f.at3(c, y - 1, x + 2) } else { 0.0 };
                ok &= shifted.tensor.at3(c, y, x) == expect;
            }
        }
    }
    r.check("warp integer shift exact", ok, "(dx, dy) = (2, -1)".into());
    let half = warp(&fm, &MotionFlow::constant(5, 6, 0.5, 0.0, (0, 1))).unwrap();
    let mut ok = true;
    for c in 0..2 {
        for y in 0..5 {
            for x in 0..5 {
                ok &= half.tensor.at3(c, y, x) == 0.5 * f.at3(c, y, x) + 0.5 * f.at3(c, y, x + 1);
            }
        }
    }
    r.check("warp half-pixel averages neighbours", ok, String::new());

    // Rectified pair: epipolar lines are image rows.
    let k = CameraModel::centered_intrinsics(40.0, (16, 12));
    let a = CameraModel::new(0, k, Matrix3::identity(), Vector3::zeros(), (16, 12)).unwrap();
    let b = CameraModel::new(1, k, Matrix3::identity(), Vector3::new(-1.0, 0.0, 0.0), (16, 12)).unwrap();
    let fm = fundamental_from_cameras(&a, &b).unwrap();
    let sigma = 1.25;
    let mask = build_epipolar_mask(&fm, (12, 16), (12, 16), sigma, 1.0).unwrap();
    let mut on_line: f64 = 1.0;
    let mut far: f64 = 0.0;
    for y in 0..12 {
        for x in 0..16 {
            for xo in 0..16 {
                on_line = on_line.min(mask.weight((x, y), (xo, y)));
                for yo in 0..12 {
                    if (yo as f64 - y as f64).abs() >= 4.0 * sigma {
                        far = far.max(mask.weight((x, y), (xo, yo)));
                    }
                }
            }
        }
    }
    r.check("epipolar weight on the line is 1", (on_line - 1.0).abs() < 1e-9, format!("{on_line}"));
    r.below("epipolar weight beyond 4 sigma", far, 1e-3);
    r.finish(start, 10.0)
}

/// Finite-difference checks on small inputs.
pub fn gradient_suite() -> SuiteReport {
    const H: f64 = 1e-5;
    const TOL: f64 = 1e-4;
    let start = Instant::now();
    let mut r = Recorder::new("gradients");
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let arch = ArchConfig {
        width_divisor: 16,
        kernel: 3,
        ..ArchConfig::default()
    };
    let mut params = ModelParameters::new(5);
    params.add_block("motion", arch.motion(4), false).unwrap();
    params.add_block("decoder", arch.decoder(2), false).unwrap();
    let report = |r: &mut Recorder, name: &str, res: Result<f64>| match res {
        Ok(e) => r.below(name, e, TOL),
        Err(e) => r.check(name, false, e.to_string()),
    };

    let x = random_tensor(&mut rng, &[4, 6, 6]);
    let proj = random_tensor(&mut rng, &[2, 6, 6]);
    let res = gradcheck(&[x], H, |g, ids| {
        let bound = params.bind(g, false);
        let (out, _) = run_block(g, &params, &bound, "motion", ids[0], &[])?;
        let t = g.constant(proj.clone());
        g.mse(out, t)
    });
    report(&mut r, "motion net wrt input", res);

    // Parameter gradients of the motion net, through the conv weights.
    let names: Vec<String> = params.tensors.keys().filter(|k| k.starts_with("motion")).cloned().collect();
    let weights: Vec<Tensor> = names.iter().map(|n| params.tensors[n].clone()).collect();
    let x = random_tensor(&mut rng, &[4, 4, 4]);
    let res = gradcheck(&weights, H, |g, ids| {
        let mut bound = params.bind(g, false);
        for (n, &id) in names.iter().zip(ids) {
            bound.ids.insert(n.clone(), id);
        }
        let xi = g.constant(x.clone());
        let (out, _) = run_block(g, &params, &bound, "motion", xi, &[])?;
        let s = g.sum(out);
        Ok(g.scale(s, 0.1))
    });
    report(&mut r, "motion net wrt weights", res);

    let feats = random_tensor(&mut rng, &[2, 8, 8]);
    // Keep flows away from integer crossings where bilinear weights kink.
    let flow = Tensor::from_vec(
        &[2, 8, 8],
        (0..128).map(|_| rng.random_range(-2.0..2.0_f64).floor() + rng.random_range(0.2..0.8)).collect(),
    )
    .unwrap();
    let probe = random_tensor(&mut rng, &[2, 8, 8]);
    let res = gradcheck(&[feats.clone(), flow], H, |g, ids| {
        let w = g.warp(ids[0], ids[1])?;
        let p = g.constant(probe.clone());
        g.mse(w, p)
    });
    report(&mut r, "warp wrt features and flow", res);

    let x = random_tensor(&mut rng, &[2, 6, 7]);
    let gt = random_tensor(&mut rng, &[1, 6, 7]);
    let res = gradcheck(&[x], H, |g, ids| {
        let bound = params.bind(g, false);
        let (out, _) = run_block(g, &params, &bound, "decoder", ids[0], &[])?;
        let t = g.constant(gt.clone());
        g.mse(out, t)
    });
    report(&mut r, "decoder with task loss", res);

    let a = random_tensor(&mut rng, &[2, 8, 8]);
    let b = random_tensor(&mut rng, &[2, 8, 8]);
    report(&mut r, "task / warping loss (mse)", gradcheck(&[a.clone(), b.clone()], H, |g, ids| g.mse(ids[0], ids[1])));
    report(&mut r, "similarity loss (cosine)", gradcheck(&[a.clone(), b.clone()], H, |g, ids| g.cosine_loss(ids[0], ids[1])));
    let c = random_tensor(&mut rng, &[2, 4, 5]);
    let d = random_tensor(&mut rng, &[2, 3, 3]);
    report(
        &mut r,
        "correlation",
        gradcheck(&[c, d], H, |g, ids| {
            let v = g.correlate(ids[0], ids[1], 0.5)?;
            let z = g.constant(Tensor::zeros(&[9, 4, 5]));
            g.mse(v, z)
        }),
    );
    let e = random_tensor(&mut rng, &[2, 4, 4]);
    report(
        &mut r,
        "resize and average pool",
        gradcheck(&[e], H, |g, ids| {
            let up = g.resize(ids[0], 8, 8, 2.0)?;
            let down = g.avgpool(up, 2)?;
            let t = g.constant(probe.channels(0, 2).unwrap());
            let t = g.avgpool(t, 2)?;
            g.mse(down, t)
        }),
    );
    r.finish(start, 60.0)
}

/// Multi-scale fusion with zero residuals reproduces the upsample chain.
pub fn telescoping_suite() -> SuiteReport {
    let start = Instant::now();
    let mut r = Recorder::new("telescoping");
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let w1 = MotionFlow::new(random_tensor(&mut rng, &[2, 3, 4]), 1, (0, 1)).unwrap();
    let residuals = vec![w1.clone(), MotionFlow::zeros(6, 8, (0, 1)), MotionFlow::zeros(12, 16, (0, 1))];
    let fused = compose_multiscale(&residuals).unwrap();
    let chain = upsample_flow(&upsample_flow(&w1, 2).unwrap(), 2).unwrap();
    r.check("w(3) equals upsample chain of w(1)", fused[2].flow == chain.flow, String::new());
    let c = MotionFlow::constant(3, 4, 1.5, -0.25, (0, 1));
    let fused = compose_multiscale(&[c, MotionFlow::zeros(6, 8, (0, 1)), MotionFlow::zeros(12, 16, (0, 1))]).unwrap();
    let ok = (0..12 * 16).all(|p| fused[2].flow.data()[p] == 6.0 && fused[2].flow.data()[192 + p] == -1.0)
        && (0..48).all(|p| fused[1].flow.data()[p] == 3.0);
    r.check("constant flow doubles per level", ok, String::new());
    r.finish(start, 10.0)
}

/// MAE / NAE against hand arithmetic.
pub fn metrics_suite() -> SuiteReport {
    let start = Instant::now();
    let mut r = Recorder::new("metrics");
    let m = count_metrics(&[0, 1], &[12.0, 19.0], &[10.0, 20.0]).unwrap();
    r.check("worked example MAE 1.5", m.mae == 1.5, format!("{}", m.mae));
    r.check("worked example NAE 0.125", (m.nae - 0.125).abs() < 1e-15, format!("{}", m.nae));
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let gt: Vec<f64> = (0..20).map(|_| rng.random_range(1..60) as f64).collect();
    let pred: Vec<f64> = gt.iter().map(|c| c + rng.random_range(-5.0..5.0)).collect();
    let frames: Vec<usize> = (0..20).collect();
    let m = count_metrics(&frames, &pred, &gt).unwrap();
    let (mut mae, mut nae) = (0.0, 0.0);
    for i in 0..20 {
        mae += (pred[i] - gt[i]).abs();
        nae += (pred[i] - gt[i]).abs() / gt[i];
    }
    r.below("20-frame MAE vs oracle", (m.mae - mae / 20.0).abs(), 1e-12);
    r.below("20-frame NAE vs oracle", (m.nae - nae / 20.0).abs(), 1e-12);
    r.finish(start, 10.0)
}

/// Latency schedules and the zero-offset fixed point of the renderer.
pub fn desync_suite() -> SuiteReport {
    let start = Instant::now();
    let mut r = Recorder::new("desync");
    let res = make_desync_schedule(&DesyncMode::Constant { tau: vec![5.0, 5.0] }, 1.0 / 7.0, 3, 50, 0, 1);
    match res {
        Ok(s) => {
            let ok = (0..50).all(|k| (s.offset_frames(1, k) - 35.0).abs() < 1e-9 && s.offset_frames(0, k) == 0.0);
            r.check("tau = 5 s at 7 fps is 35 frames", ok, format!("{}", s.offset_frames(1, 0)));
        }
        Err(e) => r.check("tau = 5 s at 7 fps is 35 frames", false, e.to_string()),
    }
    let mut cfg = SimConfig::desk();
    cfg.n_frames = 6;
    cfg.desync = DesyncMode::Constant { tau: vec![0.0, 0.0] };
    r.result(
        "zero offset reproduces synchronized frames bit-exactly",
        generate_dataset(&cfg, 3).and_then(|ds| {
            let synced = ds.synced.as_ref().expect("synced frames");
            if ds.frames == *synced {
                Ok(())
            } else {
                Err(crate::Error::Dataset("frames differ".into()))
            }
        }),
    );
    r.finish(start, 30.0)
}

/// Every oracle suite, in order.
pub fn run_all() -> Vec<SuiteReport> {
    vec![
        geometry_suite(),
        matching_suite(),
        gradient_suite(),
        telescoping_suite(),
        metrics_suite(),
        desync_suite(),
    ]
}

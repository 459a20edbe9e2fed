use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use viewsync::geometry::{build_epipolar_mask, fundamental_from_cameras, CameraModel};
use viewsync::kernels::{conv2d_forward, correlation_forward, warp_forward, ConvShape};
use viewsync::par;

fn random(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn modes() -> [(&'static str, bool); 2] {
    [("parallel", true), ("sequential", false)]
}

fn run<R: Send>(parallel: bool, f: impl FnOnce() -> R + Send) -> R {
    if parallel {
        f()
    } else {
        par::run_sequential(f)
    }
}

fn bench_conv(c: &mut Criterion) {
    let s = ConvShape {
        c_in: 16,
        c_out: 32,
        h: 48,
        w: 64,
        k: 5,
    };
    let x = random(s.c_in * s.h * s.w, 1);
    let w = random(s.c_out * s.c_in * 25, 2);
    let b = random(s.c_out, 3);
    let mut group = c.benchmark_group("conv2d_16x32_48x64");
    for (name, p) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |bench| {
            bench.iter(|| run(p, || conv2d_forward(&x, &w, &b, s)))
        });
    }
    group.finish();
}

fn bench_correlation_and_warp(c: &mut Criterion) {
    let (ch, h, w) = (32, 12, 16);
    let a = random(ch * h * w, 4);
    let b2 = random(ch * h * w, 5);
    let flow = random(2 * h * w, 6);
    let mut group = c.benchmark_group("matching_12x16");
    for (name, p) in modes() {
        group.bench_function(BenchmarkId::new("correlation", name), |bench| {
            bench.iter(|| run(p, || correlation_forward(&a, &b2, ch, h * w, h * w, 1.0 / ch as f64)))
        });
        group.bench_function(BenchmarkId::new("warp", name), |bench| {
            bench.iter(|| run(p, || warp_forward(&a, &flow, ch, h, w)))
        });
    }
    group.finish();
}

fn bench_epipolar_mask(c: &mut Criterion) {
    let k = CameraModel::centered_intrinsics(40.0, (64, 48));
    let r = nalgebra::Matrix3::identity();
    let a = CameraModel::new(0, k, r, nalgebra::Vector3::zeros(), (64, 48)).unwrap();
    let b = CameraModel::new(1, k, r, nalgebra::Vector3::new(-1.0, 0.2, 0.1), (64, 48)).unwrap();
    let f = fundamental_from_cameras(&a, &b).unwrap();
    let mut group = c.benchmark_group("epipolar_mask_24x32");
    for (name, p) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |bench| {
            bench.iter(|| run(p, || build_epipolar_mask(&f, (24, 32), (24, 32), 2.0, 0.5).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_conv, bench_correlation_and_warp, bench_epipolar_mask);
criterion_main!(benches);

mod common;

use common::{small_dataset, small_sim};
use proptest::prelude::*;
use viewsync::scene_sim::{export_dataset, generate_dataset, ingest_dataset, make_desync_schedule, DesyncMode};
use viewsync::Error;

#[test]
fn export_ingest_round_trip() {
    let ds = small_dataset(5, 31);
    let dir = tempfile::tempdir().unwrap();
    export_dataset(&ds, dir.path()).unwrap();
    let back = ingest_dataset(dir.path()).unwrap();
    assert_eq!(back.manifest, ds.manifest);
    assert_eq!(back.frames, ds.frames);
    assert_eq!(back.synced, ds.synced);
    assert_eq!(back.density, ds.density);
    assert_eq!(back.schedule, ds.schedule);
    for (a, b) in back.cameras.iter().zip(&ds.cameras) {
        assert!((a.rotation - b.rotation).norm() < 1e-12);
    }
}

#[test]
fn ingest_rejects_ground_truth_count_mismatch() {
    let ds = small_dataset(4, 32);
    let dir = tempfile::tempdir().unwrap();
    export_dataset(&ds, dir.path()).unwrap();
    std::fs::remove_file(dir.path().join("gt").join("density_3.f32")).unwrap();
    assert!(matches!(ingest_dataset(dir.path()), Err(Error::Dataset(_))));
}

#[test]
fn ingest_reports_missing_and_truncated_files() {
    let ds = small_dataset(3, 33);
    let dir = tempfile::tempdir().unwrap();
    export_dataset(&ds, dir.path()).unwrap();
    std::fs::write(dir.path().join("view_1").join("frame_2.f32"), [0u8; 12]).unwrap();
    assert!(matches!(ingest_dataset(dir.path()), Err(Error::Corrupt { .. })));
    std::fs::remove_file(dir.path().join("cameras.toml")).unwrap();
    assert!(matches!(ingest_dataset(dir.path()), Err(Error::MissingFile(_))));
}

#[test]
fn zero_latency_frames_equal_synchronized_frames() {
    let mut cfg = small_sim(5);
    cfg.desync = DesyncMode::Constant { tau: vec![0.0, 0.0] };
    let ds = generate_dataset(&cfg, 34).unwrap();
    assert_eq!(Some(&ds.frames), ds.synced.as_ref());
}

#[test]
fn reference_view_is_always_synchronized() {
    let ds = small_dataset(6, 35);
    let synced = ds.synced.as_ref().unwrap();
    assert_eq!(ds.frames[0], synced[0]);
    assert_ne!(ds.frames[1], synced[1]);
}

#[test]
fn ground_truth_integrates_to_count() {
    let ds = small_dataset(6, 36);
    for k in 0..6 {
        let d = ds.density(k);
        assert!((d.sum() - d.count).abs() < 1e-3, "{} vs {}", d.sum(), d.count);
        assert_eq!(d.count, d.count.round());
    }
}

#[test]
fn same_seed_same_dataset() {
    assert_eq!(small_dataset(3, 37).frames, small_dataset(3, 37).frames);
    assert_ne!(small_dataset(3, 37).frames, small_dataset(3, 38).frames);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_offsets_stay_within_kappa(k1 in 0.0..5.0f64, k2 in 0.0..5.0f64, seed in any::<u64>(), reference in 0usize..3) {
        let s = make_desync_schedule(&DesyncMode::Random { kappa: vec![k1, k2] }, 0.5, 3, 40, reference, seed).unwrap();
        prop_assert!(s.offsets[reference].iter().all(|v| *v == 0.0));
        let others: Vec<usize> = (0..3).filter(|&v| v != reference).collect();
        prop_assert!(s.offsets[others[0]].iter().all(|v| v.abs() <= k1));
        prop_assert!(s.offsets[others[1]].iter().all(|v| v.abs() <= k2));
        s.validate().unwrap();
    }

    #[test]
    fn constant_offsets_in_frames(tau in -10.0..10.0f64, fps in 1.0..30.0f64) {
        let s = make_desync_schedule(&DesyncMode::Constant { tau: vec![tau, -tau] }, 1.0 / fps, 3, 5, 0, 0).unwrap();
        prop_assert!((s.offset_frames(1, 3) - tau * fps).abs() < 1e-9);
        prop_assert!((s.capture_time(2, 4) - (4.0 / fps - tau)).abs() < 1e-9);
    }
}

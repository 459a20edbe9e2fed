mod common;

use common::{calibration, small_config, small_dataset};
use viewsync::losses::LossScenario;
use viewsync::neural_blocks::ArchConfig;
use viewsync::pipeline::{
    assemble_model, evaluate, load_model, save_model, train, ModelConfig, OptimizerConfig, Phase, TrainScenario, Variant,
};
use viewsync::{Error, Tensor};

fn conv(k: usize, i: usize, o: usize) -> usize {
    k * k * i * o + o
}

#[test]
fn base_parameter_count_matches_layer_tables() {
    // Extractor conv1..conv6 plus the prediction head on a 3·32-channel concat.
    let extractor = conv(5, 1, 16) + conv(5, 16, 16) + conv(5, 16, 32) + conv(5, 32, 32) + conv(5, 32, 64) + conv(5, 64, 32);
    let decoder = conv(5, 96, 64) + conv(5, 64, 32) + conv(5, 32, 1);
    let c = ModelConfig::new(Variant::Base, 3, (64, 48));
    let model = assemble_model(&c, None).unwrap();
    assert_eq!(model.params.param_count(), extractor + decoder);
    assert_eq!(extractor + decoder, 353_489);

    let mut c = c;
    c.arch = ArchConfig {
        aux_head: true,
        ..ArchConfig::default()
    };
    assert_eq!(assemble_model(&c, None).unwrap().params.param_count(), extractor + decoder + conv(5, 32, 1));
}

#[test]
fn motion_net_parameter_count() {
    let motion = |n| conv(5, n, 128) + conv(5, 128, 128) + conv(5, 128, 64) + conv(5, 64, 64) + conv(5, 64, 32) + conv(5, 32, 2);
    let base = assemble_model(&ModelConfig::new(Variant::Base, 3, (64, 48)), None).unwrap().params.param_count();
    let mut c = ModelConfig::new(Variant::Sls, 3, (64, 48));
    c.loss = viewsync::losses::LossConfig::for_scenario(LossScenario::SyncPlusUnsync);
    assert_eq!(assemble_model(&c, None).unwrap().params.param_count(), base + motion(64));
    c.variant = Variant::ClsCat;
    assert_eq!(assemble_model(&c, None).unwrap().params.param_count(), base + motion(64));
    c.variant = Variant::ClsCor;
    c.corr_max_cells = 48;
    // 12×16 features pooled to 6×8 give a 48-channel volume.
    assert_eq!(assemble_model(&c, None).unwrap().params.param_count(), base + motion(48));
}

#[test]
fn prediction_graph_reads_only_unsynchronized_frames() {
    let ds = small_dataset(4, 21);
    let calib = calibration(&ds);
    for variant in [Variant::Base, Variant::Sls, Variant::ClsCat, Variant::ClsCor, Variant::ClsEpi] {
        let scen = if variant == Variant::Base { LossScenario::TaskOnly } else { LossScenario::SyncPlusUnsync };
        let model = assemble_model(&small_config(variant, scen), Some(&calib)).unwrap();
        let images: Vec<Tensor> = (0..3).map(|v| ds.image(v, 1)).collect();
        let (g, bound, nodes) = model.inference_graph(&images).unwrap();
        let mut allowed: Vec<_> = bound.ids.values().copied().chain(nodes.images.iter().copied()).collect();
        allowed.sort();
        let mut leaves = g.constant_leaves();
        leaves.sort();
        assert_eq!(leaves, allowed, "{variant:?}");
        for (v, id) in nodes.images.iter().enumerate() {
            assert_eq!(g.value(*id), &ds.image(v, 1));
        }
    }
}

#[test]
fn model_checkpoint_round_trip() {
    let ds = small_dataset(3, 22);
    let calib = calibration(&ds);
    let model = assemble_model(&small_config(Variant::ClsEpi, LossScenario::UnsyncOnly), Some(&calib)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_model(&path, &model, serde_json::json!({"step": 0})).unwrap();
    let (back, extra) = load_model(&path, &calib).unwrap();
    assert_eq!(back.config, model.config);
    assert_eq!(extra["step"], 0);
    let images: Vec<Tensor> = (0..3).map(|v| ds.image(v, 0)).collect();
    let a = model.predict(&images).unwrap().density.count;
    let b = back.predict(&images).unwrap().density.count;
    assert!((a - b).abs() < 1e-3 * a.abs().max(1.0));
}

#[test]
fn task_only_training_reduces_prediction_loss_tenfold() {
    let ds = small_dataset(12, 23);
    let mut model = assemble_model(&small_config(Variant::Base, LossScenario::TaskOnly), Some(&calibration(&ds))).unwrap();
    let opt = OptimizerConfig {
        steps: 1200,
        grad_clip: Some(10.0),
        ..OptimizerConfig::default()
    };
    let frames: Vec<usize> = (0..12).collect();
    let report = train(&mut model, &ds, &TrainScenario::base_s(), &opt, &frames, 0, None).unwrap();
    let (head, tail) = report.head_tail_mean(12, |r| r.loss_p);
    assert!(report.records.iter().all(|r| r.phase == Phase::Synced));
    assert!(tail * 10.0 <= head, "loss_p {head} -> {tail}");
}

#[test]
fn warping_loss_drops_below_zero_flow_value() {
    let ds = small_dataset(12, 24);
    let calib = calibration(&ds);
    let mut model = assemble_model(&small_config(Variant::ClsCor, LossScenario::SyncPlusUnsync), Some(&calib)).unwrap();
    let frames: Vec<usize> = (0..12).collect();
    // Zero-initialized motion heads: the first evaluation is the zero-flow value.
    let zero_flow = |model: &viewsync::pipeline::Model| -> f64 {
        let mut total = 0.0;
        for &k in &frames {
            let mut g = viewsync::autograd::Graph::new();
            let b = model.params.bind(&mut g, false);
            let imgs: Vec<Tensor> = (0..3).map(|v| ds.image(v, k)).collect();
            let synced: Vec<Tensor> = (0..3).map(|v| ds.synced_image(v, k).unwrap()).collect();
            let (_, vals) = model.loss_graph(&mut g, &b, &imgs, Some(&synced), &ds.density(k)).unwrap();
            total += vals.loss_w;
        }
        total / frames.len() as f64
    };
    let opt = OptimizerConfig {
        steps: 300,
        grad_clip: Some(10.0),
        ..OptimizerConfig::default()
    };
    train(&mut model, &ds, &TrainScenario::sync_plus_unsync(), &opt, &frames, 0, None).unwrap();
    // Compare against the zero-flow warp with the trained extractor.
    let trained = zero_flow(&model);
    let mut frozen = model.clone();
    for (k, t) in frozen.params.tensors.iter_mut() {
        if k.starts_with("motion.") {
            *t = Tensor::zeros(t.shape());
        }
    }
    let at_zero = zero_flow(&frozen);
    assert!(trained < at_zero, "trained {trained} vs zero flow {at_zero}");
}

#[test]
fn default_gammas() {
    use viewsync::losses::LossConfig;
    assert_eq!(LossConfig::for_scenario(LossScenario::SyncPlusUnsync).gamma, 1.0);
    assert_eq!(LossConfig::for_scenario(LossScenario::UnsyncOnly).gamma, 1000.0);
}

#[test]
fn unsync_only_training_refuses_warping_loss() {
    let ds = small_dataset(3, 25);
    let mut model = assemble_model(&small_config(Variant::Sls, LossScenario::SyncPlusUnsync), Some(&calibration(&ds))).unwrap();
    let opt = OptimizerConfig {
        steps: 1,
        ..OptimizerConfig::default()
    };
    let err = train(&mut model, &ds, &TrainScenario::unsync_only(), &opt, &[0], 0, None).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn divergence_is_reported() {
    let ds = small_dataset(3, 26);
    let mut model = assemble_model(&small_config(Variant::Base, LossScenario::TaskOnly), Some(&calibration(&ds))).unwrap();
    for t in model.params.tensors.values_mut() {
        *t = t.map(|x| x * 1e200);
    }
    let opt = OptimizerConfig {
        steps: 2,
        ..OptimizerConfig::default()
    };
    let err = train(&mut model, &ds, &TrainScenario::unsync_only(), &opt, &[0, 1], 0, None).unwrap_err();
    assert!(matches!(err, Error::Diverged { step: 0, .. }), "{err:?}");
}

#[test]
fn training_and_evaluation_are_deterministic() {
    let ds = small_dataset(6, 27);
    let calib = calibration(&ds);
    let run = || {
        let mut model = assemble_model(&small_config(Variant::ClsCor, LossScenario::UnsyncOnly), Some(&calib)).unwrap();
        let opt = OptimizerConfig {
            steps: 8,
            ..OptimizerConfig::default()
        };
        let mut log = Vec::new();
        train(&mut model, &ds, &TrainScenario::unsync_only(), &opt, &[0, 1, 2, 3], 0, Some(&mut log)).unwrap();
        (evaluate(&model, &ds, &[4, 5]).unwrap(), log)
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(a, b);
    assert_eq!(la, lb);
    let first: serde_json::Value = serde_json::from_slice(la.split(|c| *c == b'\n').next().unwrap()).unwrap();
    for key in ["step", "loss_p", "loss_w", "loss_s", "total"] {
        assert!(first.get(key).is_some(), "{key}");
    }
}

#[test]
fn base_su_fine_tunes_on_unsynchronized_frames() {
    let ds = small_dataset(4, 28);
    let mut model = assemble_model(&small_config(Variant::Base, LossScenario::TaskOnly), Some(&calibration(&ds))).unwrap();
    let opt = OptimizerConfig {
        steps: 3,
        finetune_steps: 2,
        ..OptimizerConfig::default()
    };
    let r = train(&mut model, &ds, &TrainScenario::base_su(), &opt, &[0, 1, 2, 3], 0, None).unwrap();
    let phases: Vec<Phase> = r.records.iter().map(|r| r.phase).collect();
    assert_eq!(phases, [Phase::Synced, Phase::Synced, Phase::Synced, Phase::Finetune, Phase::Finetune]);
}

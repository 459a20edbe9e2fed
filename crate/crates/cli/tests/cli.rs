use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use viewsync::neural_blocks::load_checkpoint;
use viewsync::scene_sim::{ingest_dataset, DesyncMode};

fn viewsync(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_viewsync"))
        .args(args)
        .env("VIEWSYNC_OUT", root)
        .env_remove("RUST_LOG")
        .output()
        .expect("spawn viewsync")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: Output) -> String {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        stdout(&o),
        String::from_utf8_lossy(&o.stderr)
    );
    stdout(&o)
}

fn line_value<'a>(text: &'a str, key: &str) -> &'a str {
    text.lines()
        .find_map(|l| l.strip_prefix(key))
        .unwrap_or_else(|| panic!("no {key:?} line in:\n{text}"))
        .trim()
}

fn small_data(root: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = root.join(name);
    let mut args = vec!["gen-data", "--frames", "8", "--agents", "8", "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    ok(viewsync(root, &args));
    out
}

fn train_run(root: &Path, data: &Path, out: &str, extra: &[&str]) -> String {
    let out = root.join(out);
    let mut args = vec!["train", "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    ok(viewsync(root, &args))
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(viewsync(dir.path(), &[]).status.code(), Some(1));
    assert_eq!(viewsync(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(viewsync(dir.path(), &["selftest", "--bogus"]).status.code(), Some(1));
    assert_eq!(viewsync(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn constant_latency_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path(), "d", &["--mode", "constant", "--tau", "5", "-5"]);
    let ds = ingest_dataset(&data).unwrap();
    assert_eq!(ds.schedule.mode, DesyncMode::Constant { tau: vec![5.0, -5.0] });
    assert!(ds.schedule.offsets[1].iter().all(|&d| d == 5.0));
    assert!(ds.schedule.offsets[2].iter().all(|&d| d == -5.0));
}

#[test]
fn random_latency_and_kappa_zero() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path(), "r", &["--mode", "random", "--kappa", "3"]);
    let ds = ingest_dataset(&data).unwrap();
    assert_eq!(ds.schedule.mode, DesyncMode::Random { kappa: vec![3.0, 3.0] });
    assert!(ds.schedule.max_abs_offset() <= 3.0);
    assert!(ds.schedule.max_abs_offset() > 0.0);

    let data = small_data(dir.path(), "z", &["--kappa", "0"]);
    let ds = ingest_dataset(&data).unwrap();
    assert_eq!(ds.schedule.max_abs_offset(), 0.0);
    assert_eq!(Some(&ds.frames), ds.synced.as_ref());
}

#[test]
fn existing_output_needs_force() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path(), "d", &[]);
    let again = viewsync(dir.path(), &["gen-data", "--frames", "8", "--out", data.to_str().unwrap()]);
    assert_eq!(again.status.code(), Some(2));
    ok(viewsync(dir.path(), &["gen-data", "--frames", "4", "--out", data.to_str().unwrap(), "--force"]));
    assert_eq!(ingest_dataset(&data).unwrap().n_frames(), 4);
}

#[test]
fn default_output_root_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    ok(viewsync(dir.path(), &["gen-data", "--frames", "3"]));
    assert!(dir.path().join("data").join("manifest.toml").exists());
}

#[test]
fn effective_config_reproduces_the_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(viewsync(
        dir.path(),
        &["gen-data", "--frames", "5", "--agents", "6", "--tau", "2", "--seed", "9", "--out", dir.path().join("a").to_str().unwrap()],
    ));
    let block: String = text
        .lines()
        .skip_while(|l| !l.starts_with("# effective config"))
        .skip(1)
        .take_while(|l| !l.starts_with("# end effective config"))
        .map(|l| format!("{l}\n"))
        .collect();
    let cfg = dir.path().join("sim.toml");
    std::fs::write(&cfg, block).unwrap();
    let b = dir.path().join("b");
    ok(viewsync(dir.path(), &["gen-data", "--config", cfg.to_str().unwrap(), "--seed", "9", "--out", b.to_str().unwrap()]));
    assert_eq!(ingest_dataset(&dir.path().join("a")).unwrap(), ingest_dataset(&b).unwrap());
}

#[test]
fn cls_epi_requires_cameras_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path(), "d", &[]);
    std::fs::remove_file(data.join("cameras.toml")).unwrap();
    let o = viewsync(dir.path(), &["train", "--data", data.to_str().unwrap(), "--variant", "cls_epi", "--steps", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cameras.toml"));
}

#[test]
fn identical_seeds_give_identical_final_loss() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path(), "d", &[]);
    let args = ["--variant", "sls", "--steps", "6", "--seed", "4"];
    let a = train_run(dir.path(), &data, "a", &args);
    let b = train_run(dir.path(), &data, "b", &args);
    assert_eq!(line_value(&a, "final_total"), line_value(&b, "final_total"));
    let c = train_run(dir.path(), &data, "c", &["--variant", "sls", "--steps", "6", "--seed", "5"]);
    assert_ne!(line_value(&a, "final_total"), line_value(&c, "final_total"));
}

#[test]
fn resume_continues_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path(), "d", &[]);
    train_run(dir.path(), &data, "run", &["--variant", "base", "--steps", "20"]);
    let text = train_run(dir.path(), &data, "run", &["--variant", "base", "--steps", "40", "--resume"]);
    assert!(text.contains("resuming at step 20"), "{text}");
    let log = std::fs::read_to_string(dir.path().join("run/train_log.jsonl")).unwrap();
    let steps: Vec<u64> = log
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["step"].as_u64().unwrap())
        .collect();
    assert_eq!(steps, vec![0, 10, 20, 30]);
    let done = train_run(dir.path(), &data, "run", &["--variant", "base", "--steps", "40", "--resume"]);
    assert!(done.contains("nothing to do"));
    // A fresh run into the same directory must be forced.
    let o = viewsync(
        dir.path(),
        &["train", "--data", data.to_str().unwrap(), "--out", dir.path().join("run").to_str().unwrap(), "--variant", "base", "--steps", "1"],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_and_data_must_agree() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path(), "d", &[]);
    train_run(dir.path(), &data, "run", &["--variant", "base", "--steps", "1"]);
    let cfg = std::fs::read_to_string(dir.path().join("run/config.toml")).unwrap();
    let bad = cfg.replace("image_size = [64, 48]", "image_size = [32, 48]");
    assert_ne!(bad, cfg);
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, bad).unwrap();
    let o = viewsync(dir.path(), &["train", "--data", data.to_str().unwrap(), "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("mismatch"));
}

#[test]
fn eval_table_and_checkpoint_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path(), "d", &[]);
    train_run(dir.path(), &data, "base", &["--variant", "base", "--steps", "2"]);
    train_run(dir.path(), &data, "sls", &["--variant", "sls", "--steps", "2"]);
    let ckpts = [dir.path().join("base"), dir.path().join("sls")];
    let text = ok(viewsync(
        dir.path(),
        &["eval", "--checkpoint", ckpts[0].to_str().unwrap(), "--checkpoint", ckpts[1].to_str().unwrap(), "--data", data.to_str().unwrap(), "--synced"],
    ));
    assert!(text.contains("MAE") && text.contains("NAE") && text.contains("random kappa"));
    assert!(text.lines().any(|l| l.starts_with("base ") && l.contains("base_u")));
    assert!(text.lines().any(|l| l.starts_with("sls ") && l.contains("unsync_only")));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("base/metrics.json")).unwrap()).unwrap();
    assert_eq!(doc["results"].as_array().unwrap().len(), 2);
    assert_eq!(doc["results"][0]["metrics"]["n_frames"], 2);

    let mut cfg: toml::Table = toml::from_str(&std::fs::read_to_string(data.join("sim.toml")).unwrap()).unwrap();
    cfg.insert("reference_view".into(), toml::Value::Integer(1));
    let path = dir.path().join("ref1.toml");
    std::fs::write(&path, toml::to_string(&cfg).unwrap()).unwrap();
    let other = dir.path().join("ref1");
    ok(viewsync(dir.path(), &["gen-data", "--config", path.to_str().unwrap(), "--out", other.to_str().unwrap()]));
    let o = viewsync(dir.path(), &["eval", "--checkpoint", ckpts[0].to_str().unwrap(), "--data", other.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn demo_sync_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path(), "d", &[]);
    // Zero steps: the motion head is still zero, so every flow is zero.
    train_run(dir.path(), &data, "m", &["--variant", "cls_cor", "--steps", "0"]);
    let ckpt = dir.path().join("m");
    let demo = dir.path().join("demo");
    let text = ok(viewsync(
        dir.path(),
        &["demo-sync", "--checkpoint", ckpt.to_str().unwrap(), "--data", data.to_str().unwrap(), "--frame", "7", "--out", demo.to_str().unwrap()],
    ));
    let names: Vec<String> = std::fs::read_dir(&demo)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names.iter().filter(|n| n.ends_with("_flow.png")).count(), 3);
    for want in ["view0_input.png", "view2_proj_warped.png", "density_pred.png", "density_gt.png"] {
        assert!(names.iter().any(|n| n == want), "{want} missing from {names:?}");
    }
    let rows: Vec<&str> = text.lines().skip_while(|l| !l.starts_with("view ")).skip(1).take(3).collect();
    for row in rows {
        let change: f64 = row.split_whitespace().nth(3).unwrap().parse().unwrap();
        assert_eq!(change, 0.0, "{row}");
    }

    ok(viewsync(
        dir.path(),
        &["eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", data.to_str().unwrap(), "--split", "all"],
    ));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(ckpt.join("metrics.json")).unwrap()).unwrap();
    let evaluated = doc["results"][0]["metrics"]["frames"][7]["pred_count"].as_f64().unwrap();
    let shown: f64 = line_value(&text, "predicted count").parse().unwrap();
    assert!((shown - evaluated).abs() <= 1e-9 * evaluated.abs().max(1.0), "{shown} vs {evaluated}");
    let gt: f64 = line_value(&text, "ground truth").parse().unwrap();
    assert_eq!(gt, doc["results"][0]["metrics"]["frames"][7]["gt_count"].as_f64().unwrap());
}

#[test]
fn plots_are_svg() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path(), "d", &[]);
    train_run(dir.path(), &data, "m", &["--variant", "sls", "--steps", "30"]);
    let m = dir.path().join("m");
    let svg = dir.path().join("plots/loss.svg");
    ok(viewsync(dir.path(), &["plot", "--log", m.join("train_log.jsonl").to_str().unwrap(), "--out", svg.to_str().unwrap()]));
    let text = std::fs::read_to_string(&svg).unwrap();
    assert!(text.starts_with("<svg"));
    assert_eq!(text.matches("<polyline").count(), 3);

    ok(viewsync(dir.path(), &["eval", "--checkpoint", m.to_str().unwrap(), "--data", data.to_str().unwrap()]));
    let counts = dir.path().join("counts.svg");
    ok(viewsync(dir.path(), &["plot", "--metrics", m.join("metrics.json").to_str().unwrap(), "--out", counts.to_str().unwrap()]));
    assert_eq!(std::fs::read_to_string(&counts).unwrap().matches("<polyline").count(), 2);
}

#[test]
fn selftest_passes_and_flags_corrupt_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(viewsync(dir.path(), &["selftest"]));
    for name in ["geometry", "matching", "gradients", "telescoping", "metrics", "desync"] {
        assert!(text.lines().any(|l| l.starts_with(name)), "suite {name} missing:\n{text}");
    }
    assert!(!text.contains("FAIL"));

    let data = small_data(dir.path(), "d", &[]);
    train_run(dir.path(), &data, "m", &["--variant", "base", "--steps", "0"]);
    let ckpt = dir.path().join("m/model.ckpt");
    load_checkpoint(&ckpt).unwrap();
    let mut bytes = std::fs::read(&ckpt).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0x40;
    std::fs::write(&ckpt, bytes).unwrap();
    let o = viewsync(dir.path(), &["selftest", "--checkpoint", ckpt.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).lines().any(|l| l.starts_with("checkpoint") && l.contains("FAIL")));
}

#[test]
fn divergence_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path(), "d", &[]);
    let o = viewsync(
        dir.path(),
        &["train", "--data", data.to_str().unwrap(), "--variant", "base", "--steps", "50", "--lr", "1e300"],
    );
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

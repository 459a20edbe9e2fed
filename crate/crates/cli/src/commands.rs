use std::fs::{self, OpenOptions};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use serde_json::json;
use viewsync::maps::MotionFlow;
use viewsync::neural_blocks::load_checkpoint;
use viewsync::pipeline::{
    calibration_of, desk_benchmark_sim, evaluate, load_model, save_model, split_frames, total_steps, train as run_train,
    ExperimentConfig, Metrics, Model, Setting, StepRecord, Variant,
};
use viewsync::scene_sim::{export_dataset, generate_dataset, ingest_dataset, Dataset, DesyncMode, SimConfig};
use viewsync::{selftest as suites, Error, Tensor};

use crate::render::{self, Series};
use crate::{DemoArgs, EvalArgs, GenDataArgs, PlotArgs, SelftestArgs, TrainArgs};

const CHECKPOINT: &str = "model.ckpt";
const TRAIN_LOG: &str = "train_log.jsonl";

/// 3 for divergence, 2 for every other failure once arguments have parsed.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Diverged { .. }) => 3,
        _ => 2,
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())).into())
}

/// Create `dir`, refusing to touch a non-empty one unless `force`.
fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.is_dir() && fs::read_dir(dir)?.next().is_some() {
        if !force {
            return Err(Error::InvalidArgument(format!(
                "{} exists and is not empty; pass --force to replace it",
                dir.display()
            ))
            .into());
        }
        fs::remove_dir_all(dir).with_context(|| format!("clearing {}", dir.display()))?;
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

fn print_effective(command: &str, body: &str) {
    println!("# effective config: viewsync {command}");
    println!("{}", body.trim_end());
    println!("# end effective config");
}

fn broadcast(values: &[f64], n: usize, flag: &str) -> Result<Vec<f64>> {
    match values.len() {
        1 => Ok(vec![values[0]; n]),
        k if k == n => Ok(values.to_vec()),
        k => Err(Error::InvalidArgument(format!("--{flag} takes 1 or {n} values, got {k}")).into()),
    }
}

fn latency_label(mode: &DesyncMode) -> String {
    let list = |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",");
    match mode {
        DesyncMode::Constant { tau } => format!("constant tau=[{}]s", list(tau)),
        DesyncMode::Random { kappa } => format!("random kappa=[{}]s", list(kappa)),
    }
}

pub fn gen_data(a: GenDataArgs) -> Result<()> {
    let mut sim: SimConfig = match &a.config {
        Some(p) => read_toml(p)?,
        None if a.benchmark => desk_benchmark_sim(),
        None => SimConfig::desk(),
    };
    if let Some(n) = a.frames {
        sim.n_frames = n;
    }
    if let Some(n) = a.agents {
        sim.agents.count = n;
    }
    if let Some(dt) = a.frame_interval {
        sim.frame_interval = dt;
    }
    if let Some(s) = a.segment {
        sim.segment_frames = (s > 0).then_some(s);
    }
    let others = sim.n_views().saturating_sub(1);
    let mode = a.mode.as_deref().or(match (&a.tau, &a.kappa) {
        (Some(_), None) => Some("constant"),
        (None, Some(_)) => Some("random"),
        _ => None,
    });
    match mode {
        Some("constant") => {
            let tau = a.tau.as_deref().ok_or_else(|| anyhow!(Error::InvalidArgument("constant mode needs --tau".into())))?;
            sim.desync = DesyncMode::Constant { tau: broadcast(tau, others, "tau")? };
        }
        Some(_) => {
            let kappa = a.kappa.as_deref().ok_or_else(|| anyhow!(Error::InvalidArgument("random mode needs --kappa".into())))?;
            sim.desync = DesyncMode::Random { kappa: broadcast(kappa, others, "kappa")? };
        }
        None => {}
    }
    let out = a.out.unwrap_or_else(|| a.root.out_root.join("data"));
    let effective = toml::to_string(&sim)?;
    print_effective(&format!("gen-data --seed {} --config <this block>", a.seed), &effective);
    prepare_dir(&out, a.force)?;
    let start = Instant::now();
    let ds = generate_dataset(&sim, a.seed)?;
    export_dataset(&ds, &out)?;
    fs::write(out.join("sim.toml"), &effective)?;
    let counts = &ds.manifest.counts;
    let mean = counts.iter().sum::<f64>() / counts.len().max(1) as f64;
    println!("dataset      {}", out.display());
    println!("views        {} (reference {})", ds.n_views(), ds.manifest.reference_view);
    println!("frames       {} every {} s", ds.n_frames(), ds.manifest.frame_interval);
    println!("image        {}x{}", ds.manifest.image_width, ds.manifest.image_height);
    println!("scene grid   {}x{}", ds.scene.rows(), ds.scene.cols());
    println!("latency      {}", latency_label(&ds.schedule.mode));
    println!("max offset   {:.3} frames", ds.schedule.max_abs_offset() / ds.schedule.frame_interval);
    println!("mean count   {mean:.3}");
    println!("synced pairs {}", if ds.synced.is_some() { "yes" } else { "no" });
    println!("elapsed      {:.1} s", start.elapsed().as_secs_f64());
    Ok(())
}

fn check_model_matches(model_n: usize, size: (usize, usize), reference: usize, ds: &Dataset, what: &str) -> Result<()> {
    let ds_size = (ds.manifest.image_width, ds.manifest.image_height);
    if model_n != ds.n_views() || size != ds_size || reference != ds.manifest.reference_view {
        return Err(Error::Config(format!(
            "{what}/data mismatch: {model_n} views of {}x{} with reference {reference} vs data with {} views of {}x{} and reference {}",
            size.0,
            size.1,
            ds.n_views(),
            ds_size.0,
            ds_size.1,
            ds.manifest.reference_view
        ))
        .into());
    }
    Ok(())
}

fn experiment_config(a: &TrainArgs, ds: &Dataset) -> Result<ExperimentConfig> {
    let variant: Option<Variant> = a.variant.as_deref().map(str::parse).transpose()?;
    let setting: Option<Setting> = a.setting.as_deref().map(str::parse).transpose()?;
    let mut cfg = match &a.config {
        Some(p) => {
            let c: ExperimentConfig = read_toml(p)?;
            check_model_matches(c.model.n_views, c.model.image_size, c.model.reference_view, ds, "config")?;
            c
        }
        None => {
            let v = variant.unwrap_or(Variant::ClsCor);
            let s = setting.unwrap_or(if v == Variant::Base { Setting::BaseU } else { Setting::UnsyncOnly });
            let mut c = ExperimentConfig::desk(v, s)?;
            c.adapt_to(ds);
            c
        }
    };
    if let Some(v) = variant {
        cfg.model.variant = v;
    }
    if let Some(s) = setting {
        cfg.setting = s;
        cfg.model.loss = s.loss();
    }
    if let Some(n) = a.steps {
        cfg.optimizer.steps = n;
    }
    if let Some(s) = a.seed {
        cfg.model.seed = s;
    }
    if let Some(lr) = a.lr {
        cfg.optimizer.learning_rate = lr;
    }
    if let Some(g) = a.gamma {
        cfg.model.loss.gamma = g;
    }
    if let Some(m) = a.scales {
        cfg.model.scales = m;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn checkpoint_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(CHECKPOINT)
    } else {
        p.to_path_buf()
    }
}

pub fn train(a: TrainArgs) -> Result<()> {
    let ds = ingest_dataset(&a.data)?;
    let cfg = experiment_config(&a, &ds)?;
    let out = a.out.clone().unwrap_or_else(|| {
        a.root
            .out_root
            .join(format!("{}_{}", cfg.model.variant.name(), cfg.setting))
    });
    let effective = toml::to_string(&cfg)?;
    print_effective(
        &format!("train --data {} --config <this block>", a.data.display()),
        &effective,
    );
    let calib = calibration_of(&ds);
    let ckpt = out.join(CHECKPOINT);
    let (mut model, start_step) = if a.resume {
        if !ckpt.exists() {
            return Err(Error::MissingFile(ckpt).into());
        }
        let (model, extra) = load_model(&ckpt, &calib)?;
        let stored: ExperimentConfig = serde_json::from_value(extra["experiment"].clone())
            .map_err(|e| Error::Corrupt { what: "checkpoint metadata".into(), detail: e.to_string() })?;
        if stored.model != cfg.model || stored.setting != cfg.setting {
            return Err(Error::Config("checkpoint was trained with a different model configuration".into()).into());
        }
        let step = extra["step"].as_u64().unwrap_or(0) as usize;
        println!("resuming at step {step}");
        (model, step)
    } else {
        prepare_dir(&out, a.force)?;
        (viewsync::pipeline::assemble_model(&cfg.model, Some(&calib))?, 0)
    };
    fs::write(out.join("config.toml"), &effective)?;
    let total = total_steps(&cfg.scenario(), &cfg.optimizer);
    if a.resume && start_step >= total {
        println!("checkpoint already at step {start_step} of {total}; nothing to do");
        return Ok(());
    }
    let (train_frames, _) = split_frames(ds.n_frames(), cfg.train_fraction);
    let log_file = OpenOptions::new()
        .create(true)
        .append(a.resume)
        .write(true)
        .truncate(!a.resume)
        .open(out.join(TRAIN_LOG))?;
    let mut log = BufWriter::new(log_file);
    let start = Instant::now();
    let report = run_train(&mut model, &ds, &cfg.scenario(), &cfg.optimizer, &train_frames, start_step, Some(&mut log))?;
    drop(log);
    save_model(
        &ckpt,
        &model,
        json!({ "step": total, "experiment": cfg, "data": a.data.display().to_string() }),
    )?;
    println!("variant      {} ({})", cfg.model.variant.name(), cfg.setting);
    println!("parameters   {}", model.params.param_count());
    println!("steps        {}..{} in {:.1} s", start_step, total, start.elapsed().as_secs_f64());
    if !report.records.is_empty() {
        let n = (report.records.len() / 10).clamp(1, 50);
        let (head, tail) = report.head_tail_mean(n, |r| r.loss_p);
        println!("loss_p       {head:.6} -> {tail:.6} (mean of first/last {n} steps)");
    }
    if let Some(last) = report.records.last() {
        println!("final_total  {}", last.total);
    }
    println!("checkpoint   {}", ckpt.display());
    println!("loss log     {}", out.join(TRAIN_LOG).display());
    Ok(())
}

fn load_for_data(path: &Path, ds: &Dataset) -> Result<(Model, Option<ExperimentConfig>)> {
    let path = checkpoint_path(path);
    let (model, extra) = load_model(&path, &calibration_of(ds)).with_context(|| format!("loading {}", path.display()))?;
    let c = &model.config;
    check_model_matches(c.n_views, c.image_size, c.reference_view, ds, "checkpoint")?;
    let exp = serde_json::from_value(extra["experiment"].clone()).ok();
    Ok((model, exp))
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let ds = ingest_dataset(&a.data)?;
    let synced_ds = if a.synced { Some(ds.synchronized_view()?) } else { None };
    let latency = latency_label(&ds.schedule.mode);
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for ckpt in &a.checkpoint {
        let (model, exp) = load_for_data(ckpt, &ds)?;
        let fraction = exp.as_ref().map_or(0.75, |e| e.train_fraction);
        let (train_frames, test_frames) = split_frames(ds.n_frames(), fraction);
        let frames = match a.split.as_str() {
            "train" => train_frames,
            "all" => (0..ds.n_frames()).collect(),
            _ => test_frames,
        };
        let metrics = evaluate(&model, &ds, &frames)?;
        let synced = synced_ds.as_ref().map(|s| evaluate(&model, s, &frames)).transpose()?;
        let setting = exp.as_ref().map_or("?".to_string(), |e| e.setting.to_string());
        rows.push((ckpt.display().to_string(), model.config.variant.name(), setting.clone(), metrics.clone(), synced.clone()));
        results.push(json!({
            "checkpoint": ckpt.display().to_string(),
            "variant": model.config.variant.name(),
            "setting": setting,
            "metrics": metrics,
            "synced_metrics": synced,
        }));
    }
    println!("data: {}  latency: {latency}  split: {}", a.data.display(), a.split);
    print!("{:<10} {:<18} {:>7} {:>9} {:>7}", "variant", "setting", "frames", "MAE", "NAE");
    if a.synced {
        print!(" {:>10} {:>10}", "MAE(sync)", "NAE(sync)");
    }
    println!();
    for (_, variant, setting, m, s) in &rows {
        print!("{variant:<10} {setting:<18} {:>7} {:>9.3} {:>7.3}", m.n_frames, m.mae, m.nae);
        if let Some(s) = s {
            print!(" {:>10.3} {:>10.3}", s.mae, s.nae);
        }
        println!();
    }
    let out = a.out.clone().unwrap_or_else(|| {
        let first = checkpoint_path(&a.checkpoint[0]);
        first.parent().map_or_else(|| PathBuf::from("metrics.json"), |p| p.join("metrics.json"))
    });
    let doc = json!({
        "data": a.data.display().to_string(),
        "latency": latency,
        "split": a.split,
        "results": results,
    });
    fs::write(&out, serde_json::to_string_pretty(&doc)?)?;
    println!("metrics      {}", out.display());
    Ok(())
}

fn channel_mean(t: &Tensor) -> Result<(Vec<f64>, usize, usize)> {
    let (c, h, w) = t.dims3()?;
    let mut out = vec![0.0; h * w];
    for ch in t.data().chunks_exact(h * w) {
        for (o, v) in out.iter_mut().zip(ch) {
            *o += v / c as f64;
        }
    }
    Ok((out, h, w))
}

fn range(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

pub fn demo_sync(a: DemoArgs) -> Result<()> {
    let ds = ingest_dataset(&a.data)?;
    if a.frame >= ds.n_frames() {
        return Err(Error::InvalidArgument(format!("frame {} out of range 0..{}", a.frame, ds.n_frames())).into());
    }
    let (model, _) = load_for_data(&a.checkpoint, &ds)?;
    let out = a.out.clone().unwrap_or_else(|| a.root.out_root.join(format!("demo_{}", a.frame)));
    print_effective(
        "demo-sync",
        &format!(
            "checkpoint = {:?}\ndata = {:?}\nframe = {}\nzoom = {}",
            a.checkpoint.display().to_string(),
            a.data.display().to_string(),
            a.frame,
            a.zoom
        ),
    );
    prepare_dir(&out, a.force)?;
    let n = ds.n_views();
    let k = a.frame;
    let images: Vec<Tensor> = (0..n).map(|v| ds.image(v, k)).collect();
    let insp = model.inspect(&images)?;
    let (iw, ih) = (ds.manifest.image_width, ds.manifest.image_height);
    for (v, img) in images.iter().enumerate() {
        let (lo, hi) = range(img.data());
        render::gray(img.data(), ih, iw, lo, hi, a.zoom, &out.join(format!("view{v}_input.png")))?;
    }

    let r = model.config.reference_view;
    let (fh, fw) = insp
        .prediction
        .flows
        .first()
        .map(|f| (f.height(), f.width()))
        .unwrap_or_else(|| model.config.feature_size(model.config.scales - 1));
    let flows: Vec<MotionFlow> = (0..n)
        .map(|v| {
            insp.prediction
                .flows
                .iter()
                .find(|f| f.view_pair.1 == v)
                .cloned()
                .unwrap_or_else(|| MotionFlow::zeros(fh, fw, (r, v)))
        })
        .collect();
    let mags: Vec<Vec<f64>> = flows
        .iter()
        .map(|f| {
            let (dx, dy) = f.flow.data().split_at(f.height() * f.width());
            dx.iter().zip(dy).map(|(x, y)| x.hypot(*y)).collect()
        })
        .collect();
    let max_mag = mags.iter().flatten().fold(0.0f64, |m, v| m.max(*v));
    for (v, f) in flows.iter().enumerate() {
        render::flow(f, max_mag, a.zoom, &out.join(format!("view{v}_flow.png")))?;
    }

    let before: Vec<_> = insp.before.iter().map(channel_mean).collect::<Result<_>>()?;
    let after: Vec<_> = insp.after.iter().map(channel_mean).collect::<Result<_>>()?;
    let (lo, hi) = before
        .iter()
        .chain(&after)
        .map(|(d, _, _)| range(d))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (c, d)| (a.min(c), b.max(d)));
    println!("{:<6} {:>14} {:>14} {:>18}", "view", "mean |flow|", "max |flow|", "max |warp-input|");
    for v in 0..n {
        let (bd, h, w) = &before[v];
        let (ad, _, _) = &after[v];
        render::gray(bd, *h, *w, lo, hi, a.zoom, &out.join(format!("view{v}_proj_unwarped.png")))?;
        render::gray(ad, *h, *w, lo, hi, a.zoom, &out.join(format!("view{v}_proj_warped.png")))?;
        let change = insp.before[v].max_abs_diff(&insp.after[v]);
        let mean = mags[v].iter().sum::<f64>() / mags[v].len().max(1) as f64;
        let max = mags[v].iter().fold(0.0f64, |m, x| m.max(*x));
        let tag = if v == r { " (reference)" } else { "" };
        println!("{:<6} {mean:>14.4} {max:>14.4} {change:>18.3e}{tag}", v);
    }

    let pred = &insp.prediction.density;
    let gt = ds.density(k);
    let hi = range(&pred.values).1.max(range(&gt.values).1);
    render::heat(&pred.values, pred.rows, pred.cols, hi, a.zoom, &out.join("density_pred.png"))?;
    render::heat(&gt.values, gt.rows, gt.cols, hi, a.zoom, &out.join("density_gt.png"))?;
    println!("predicted count {}", pred.sum());
    println!("ground truth    {}", gt.count);
    println!("images          {}", out.display());
    Ok(())
}

#[derive(serde::Deserialize)]
struct MetricsDoc {
    results: Vec<MetricsEntry>,
}

#[derive(serde::Deserialize)]
struct MetricsEntry {
    checkpoint: String,
    variant: String,
    setting: String,
    metrics: Metrics,
}

pub fn plot(a: PlotArgs) -> Result<()> {
    let svg = if !a.log.is_empty() {
        let mut series = Vec::new();
        for path in &a.log {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let records = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(serde_json::from_str::<StepRecord>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
            let stem = path
                .parent()
                .and_then(Path::file_name)
                .or_else(|| path.file_stem())
                .map_or_else(|| "log".into(), |s| s.to_string_lossy().into_owned());
            let terms: [(&str, fn(&StepRecord) -> f64); 4] = [
                ("loss_p", |r| r.loss_p),
                ("loss_w", |r| r.loss_w),
                ("loss_s", |r| r.loss_s),
                ("total", |r| r.total),
            ];
            for (name, f) in terms {
                let points: Vec<(f64, f64)> = records.iter().map(|r| (r.step as f64, f(r))).collect();
                if points.iter().any(|p| p.1 != 0.0) {
                    series.push(Series { name: format!("{stem} {name}"), points });
                }
            }
        }
        render::line_chart("training losses", "step", "loss", &series, true)
    } else {
        let mut series = Vec::new();
        for path in &a.metrics {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let doc: MetricsDoc = serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
            for entry in doc.results {
                if series.is_empty() {
                    series.push(Series {
                        name: "ground truth".into(),
                        points: entry.metrics.frames.iter().map(|f| (f.frame as f64, f.gt_count)).collect(),
                    });
                }
                let label = Path::new(&entry.checkpoint)
                    .file_name()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                series.push(Series {
                    name: format!("{} {} (MAE {:.2}) {label}", entry.variant, entry.setting, entry.metrics.mae),
                    points: entry.metrics.frames.iter().map(|f| (f.frame as f64, f.pred_count)).collect(),
                });
            }
        }
        render::line_chart("counts per frame", "frame", "count", &series, false)
    };
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&a.out, svg)?;
    println!("plot         {}", a.out.display());
    Ok(())
}

pub fn selftest(a: SelftestArgs) -> Result<()> {
    let mut failed = 0;
    println!("{:<12} {:<44} {:<6} detail", "suite", "check", "status");
    for report in suites::run_all() {
        for c in &report.checks {
            let status = if c.passed { "pass" } else { "FAIL" };
            println!("{:<12} {:<44} {:<6} {}", report.suite, c.name, status, c.detail);
            failed += usize::from(!c.passed);
        }
        let within = report.seconds <= report.budget_seconds;
        println!(
            "{:<12} {:<44} {:<6} {:.2} s of {:.0} s",
            report.suite,
            "runtime budget",
            if within { "pass" } else { "FAIL" },
            report.seconds,
            report.budget_seconds
        );
        failed += usize::from(!within);
    }
    if let Some(p) = &a.checkpoint {
        let path = checkpoint_path(p);
        match load_checkpoint(&path) {
            Ok((params, _)) => println!("{:<12} {:<44} {:<6} {} parameters", "checkpoint", "reload", "pass", params.param_count()),
            Err(e) => {
                println!("{:<12} {:<44} {:<6} {e}", "checkpoint", "reload", "FAIL");
                failed += 1;
            }
        }
    }
    if failed > 0 {
        bail!("{failed} selftest check(s) failed");
    }
    println!("all checks passed");
    Ok(())
}

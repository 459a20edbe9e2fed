//! Acceptance suite: prints one PASS/FAIL line per criterion and a summary;
//! with ACCEPTANCE_STRICT=1 it exits non-zero if any fails. The training
//! comparison takes about two hours on one core.

use std::process::ExitCode;

use viewsync::pipeline::{desk_benchmark_dataset, run_experiment, ExperimentConfig, Metrics, Outcome, Setting, Variant};
use viewsync::selftest::{self, SuiteReport};

const MODEL_BUDGET_SECONDS: f64 = 1800.0;
/// Model seeds for the base and CLS comparisons; one run per seed differs by
/// more than the margins being tested.
const SEEDS: [u64; 3] = [7, 8, 9];

struct Line {
    id: &'static str,
    passed: bool,
    detail: String,
}

fn suite_line(id: &'static str, report: SuiteReport) -> Line {
    let failed: Vec<String> = report
        .checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{} ({})", c.name, c.detail))
        .collect();
    let mut detail = format!(
        "{} {} checks in {:.2} s (budget {:.0} s)",
        report.suite,
        report.checks.len(),
        report.seconds,
        report.budget_seconds
    );
    if !failed.is_empty() {
        detail.push_str(&format!("; failed: {}", failed.join(", ")));
    }
    Line {
        id,
        passed: report.passed(),
        detail,
    }
}

fn run(ds: &viewsync::scene_sim::Dataset, variant: Variant, setting: Setting, seed: u64) -> Outcome {
    let mut config = ExperimentConfig::desk(variant, setting).expect("desk config");
    config.model.seed = seed;
    let outcome = run_experiment(ds, &config, None).expect("training run");
    let synced = outcome.synced_metrics.as_ref().map_or(f64::NAN, |m| m.mae);
    println!(
        "  {:<8} {:<18} seed {seed}  MAE {:.3}  NAE {:.3}  synced-input MAE {:.3}  {:.0} s",
        variant.name(),
        setting.name(),
        outcome.metrics.mae,
        outcome.metrics.nae,
        synced,
        outcome.seconds
    );
    outcome
}

fn synced_mae(o: &Outcome) -> f64 {
    o.synced_metrics.as_ref().map_or(f64::NAN, |m: &Metrics| m.mae)
}

fn seeds(ds: &viewsync::scene_sim::Dataset, variant: Variant, setting: Setting) -> Vec<Outcome> {
    SEEDS.iter().map(|&s| run(ds, variant, setting, s)).collect()
}

fn mean(runs: &[Outcome], f: impl Fn(&Outcome) -> f64) -> f64 {
    runs.iter().map(f).sum::<f64>() / runs.len() as f64
}

fn listed(runs: &[Outcome], f: impl Fn(&Outcome) -> f64) -> String {
    runs.iter().map(|o| format!("{:.3}", f(o))).collect::<Vec<_>>().join("/")
}

fn main() -> ExitCode {
    let mut lines = vec![
        suite_line("1 geometry oracles", selftest::geometry_suite()),
        suite_line("2 matching and warping oracles", selftest::matching_suite()),
        suite_line("3 gradient checks", selftest::gradient_suite()),
        suite_line("4 multi-scale telescoping", selftest::telescoping_suite()),
        suite_line("5 metric arithmetic", selftest::metrics_suite()),
    ];
    for l in &lines {
        report(l);
    }

    println!("training the variant comparison (3 views, 48x56 grid, random latency up to 3 frames)");
    let ds = desk_benchmark_dataset().expect("benchmark dataset");
    let base_u = seeds(&ds, Variant::Base, Setting::BaseU);
    let base_s = seeds(&ds, Variant::Base, Setting::BaseS);
    let cor = seeds(&ds, Variant::ClsCor, Setting::UnsyncOnly);
    let epi = seeds(&ds, Variant::ClsEpi, Setting::UnsyncOnly);
    let sls_s = run(&ds, Variant::Sls, Setting::UnsyncOnly, SEEDS[0]);
    let sls_p = run(&ds, Variant::Sls, Setting::TaskOnly, SEEDS[0]);
    let slowest = [&base_u, &base_s, &cor, &epi]
        .iter()
        .flat_map(|r| r.iter())
        .chain([&sls_s, &sls_p])
        .map(|o| o.seconds)
        .fold(0.0, f64::max);
    let in_budget = slowest <= MODEL_BUDGET_SECONDS;

    let mae = |o: &Outcome| o.metrics.mae;
    let (u, c, e) = (mean(&base_u, mae), mean(&cor, mae), mean(&epi, mae));
    let bound = 0.85 * u;
    let six_a = Line {
        id: "6a CLS-cor and CLS-epi at least 15% below BaseU",
        passed: c <= bound && e <= bound && in_budget,
        detail: format!(
            "mean MAE over seeds {SEEDS:?}: cor {c:.3} ({}), epi {e:.3} ({}), bound {bound:.3} from BaseU {u:.3} ({}); slowest model {slowest:.0} s",
            listed(&cor, mae),
            listed(&epi, mae),
            listed(&base_u, mae)
        ),
    };
    let six_b = Line {
        id: "6b SLS with similarity loss beats SLS without",
        passed: sls_s.metrics.mae < sls_p.metrics.mae,
        detail: format!("seed {}: with {:.3}, without {:.3}", SEEDS[0], sls_s.metrics.mae, sls_p.metrics.mae),
    };
    let (sc, se, ss) = (mean(&cor, synced_mae), mean(&epi, synced_mae), mean(&base_s, synced_mae));
    let six_c = Line {
        id: "6c synced-input CLS within 5% of BaseS",
        passed: sc <= 1.05 * ss && se <= 1.05 * ss,
        detail: format!(
            "mean synced-input MAE: cor {sc:.3} ({}), epi {se:.3} ({}), BaseS {ss:.3} ({}), bound {:.3}",
            listed(&cor, synced_mae),
            listed(&epi, synced_mae),
            listed(&base_s, synced_mae),
            1.05 * ss
        ),
    };
    for l in [six_a, six_b, six_c] {
        report(&l);
        lines.push(l);
    }

    let seven = suite_line("7 desync harness", selftest::desync_suite());
    report(&seven);
    lines.push(seven);

    let again = desk_benchmark_dataset().expect("benchmark dataset");
    let rerun = run(&again, Variant::Base, Setting::BaseU, SEEDS[0]);
    let first = &base_u[0];
    let same_losses = rerun.report.records == first.report.records;
    let eight = Line {
        id: "8 determinism",
        passed: again == ds && rerun.metrics == first.metrics && same_losses,
        detail: format!(
            "BaseU rerun MAE {:?} vs {:?}; dataset identical {}; loss trace identical {}",
            rerun.metrics.mae,
            first.metrics.mae,
            again == ds,
            same_losses
        ),
    };
    report(&eight);
    lines.push(eight);

    let failed = lines.iter().filter(|l| !l.passed).count();
    println!("summary: {} passed, {failed} failed", lines.len() - failed);
    // Failed criteria are reported above; they only fail the test target
    // when ACCEPTANCE_STRICT is set, so the other targets still run.
    let strict = std::env::var_os("ACCEPTANCE_STRICT").is_some_and(|v| v != "0");
    if failed == 0 || !strict {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn report(l: &Line) {
    println!("criterion {}: {} ({})", l.id, if l.passed { "PASS" } else { "FAIL" }, l.detail);
}

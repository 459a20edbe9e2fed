mod commands;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Synchronize unsynchronized multi-camera views for crowd counting:
/// generate synthetic data, train, evaluate and inspect models.
#[derive(Parser, Debug)]
#[command(name = "viewsync", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a multi-view crowd sequence and write it as a dataset directory.
    GenData(GenDataArgs),
    /// Train one model variant and write a checkpoint and loss log.
    Train(TrainArgs),
    /// Evaluate checkpoints and print MAE/NAE.
    Eval(EvalArgs),
    /// Write input, flow, feature and density images for one frame.
    DemoSync(DemoArgs),
    /// Render loss curves or per-frame counts as SVG.
    Plot(PlotArgs),
    /// Run the oracle suites.
    Selftest(SelftestArgs),
}

/// Output root used when `--out` is omitted.
#[derive(Args, Debug, Clone)]
pub struct OutRoot {
    #[arg(long, env = "VIEWSYNC_OUT", default_value = "viewsync-out", hide_env_values = true)]
    pub out_root: PathBuf,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Full simulator configuration (TOML); flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory [default: <out-root>/data].
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Start from the variant-comparison sequence (400 frames, crowd redrawn every 5).
    #[arg(long)]
    pub benchmark: bool,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub agents: Option<usize>,
    /// Latency mode.
    #[arg(long, value_parser = ["constant", "random"])]
    pub mode: Option<String>,
    /// Constant offsets in seconds, one per non-reference view (or one for all).
    #[arg(long, num_args = 1.., allow_negative_numbers = true)]
    pub tau: Option<Vec<f64>>,
    /// Random offset bound in seconds, one per non-reference view (or one for all).
    #[arg(long, num_args = 1..)]
    pub kappa: Option<Vec<f64>>,
    /// Seconds between reference frames.
    #[arg(long)]
    pub frame_interval: Option<f64>,
    /// Redraw the crowd every this many frames.
    #[arg(long)]
    pub segment: Option<usize>,
    /// Replace an existing non-empty output directory.
    #[arg(long)]
    pub force: bool,
    #[command(flatten)]
    pub root: OutRoot,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Experiment configuration (TOML) as printed by a previous run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory [default: <out-root>/<variant>_<setting>].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// base, sls, cls_cat, cls_cor or cls_epi.
    #[arg(long)]
    pub variant: Option<String>,
    /// base_s, base_su, base_u, sync_plus_unsync, unsync_only or task_only.
    #[arg(long)]
    pub setting: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Number of feature scales (1..=3).
    #[arg(long)]
    pub scales: Option<usize>,
    /// Continue from the checkpoint in the run directory.
    #[arg(long, conflicts_with = "force")]
    pub resume: bool,
    /// Replace an existing run directory.
    #[arg(long)]
    pub force: bool,
    #[command(flatten)]
    pub root: OutRoot,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint file or run directory; repeat to compare several.
    #[arg(long, required = true)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Frames to evaluate.
    #[arg(long, default_value = "test", value_parser = ["test", "train", "all"])]
    pub split: String,
    /// Also evaluate with every view captured at the reference time.
    #[arg(long)]
    pub synced: bool,
    /// Metrics file [default: metrics.json next to the first checkpoint].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DemoArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub frame: usize,
    /// Image directory [default: <out-root>/demo_<frame>].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Nearest-neighbour magnification of every image.
    #[arg(long, default_value_t = 4)]
    pub zoom: u32,
    #[arg(long)]
    pub force: bool,
    #[command(flatten)]
    pub root: OutRoot,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// Training logs (JSON lines); plots loss curves.
    #[arg(long, num_args = 1.., required_unless_present = "metrics", conflicts_with = "metrics")]
    pub log: Vec<PathBuf>,
    /// Metrics files written by `eval`; plots per-frame counts.
    #[arg(long, num_args = 1..)]
    pub metrics: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SelftestArgs {
    /// Also check that this checkpoint reloads intact.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::DemoSync(a) => commands::demo_sync(a),
        Command::Plot(a) => commands::plot(a),
        Command::Selftest(a) => commands::selftest(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}

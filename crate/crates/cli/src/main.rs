//! `detal`: dataset analysis, mosaic planning, active-learning rounds,
//! evaluation, cost accounting and report tables for small-object detection.

mod cmd;
mod config;
mod ctx;
mod fail;
mod lock;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use detal::al::{Acquisition, AggregationMethod, PoolUpdate};
use detal::dataset::Split;

use crate::config::{DetectorChoice, CONFIG_ENV};
use crate::ctx::Ctx;
use crate::fail::CmdResult;

#[derive(Parser, Debug)]
#[command(name = "detal", version, about = "Active learning and lightweight-detector tooling for small-object datasets")]
#[command(after_help = "Exit status: 0 ok, 1 usage or config error, 2 data error, 3 internal error.")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    global: GlobalArgs,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Run config (TOML); flags override its values
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,

    /// Global seed; every random stream derives from it
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Worker threads for parallel scoring and simulation
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Suppress progress output on stderr
    #[arg(short, long, global = true)]
    pub quiet: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a seeded surrogate dataset in the dataset directory layout
    Synth(cmd::dataset::SynthArgs),
    /// Split and class counts, box scale records and an area-ratio histogram
    Analyze(cmd::dataset::AnalyzeArgs),
    /// Remove extremely small annotations and write the filtered dataset
    Filter(cmd::dataset::FilterArgs),
    /// Per-epoch mosaic on/off schedule
    Schedule(cmd::mosaic::ScheduleArgs),
    /// Plan one epoch of mosaic composites and optionally render them
    Mosaic(cmd::mosaic::MosaicArgs),
    /// Image-level uncertainty for the unlabeled pool
    Score(cmd::al::ScoreArgs),
    /// Select the next batch for annotation and advance the pool state
    Select(cmd::al::SelectArgs),
    /// Evaluate predictions against ground truth (AP per class, mAP, P, R)
    Eval(cmd::eval::EvalArgs),
    /// Parameter and FLOP accounting for block-graph model files
    Cost(cmd::cost::CostArgs),
    /// Run full active-learning loops and write one round log per method and strategy
    AlSim(cmd::al::AlSimArgs),
    /// Render growth, score and stage tables from round logs
    Report(cmd::report::ReportArgs),
}

/// Shared `--detector` / `--predictions` flags.
#[derive(Args, Debug, Clone, Default)]
pub struct PredictionArgs {
    /// Flat directory of `<id>.txt` prediction files (class cx cy w h score)
    #[arg(long, conflicts_with = "detector")]
    pub predictions: Option<PathBuf>,

    /// synthetic, synthetic:<config.toml> or external:<dir> (reads <dir>/round<t>/)
    #[arg(long)]
    pub detector: Option<DetectorChoice>,

    /// Fail when a prediction file is missing instead of treating it as empty
    #[arg(long)]
    pub strict: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitArg {
    Train,
    Valid,
    Pool,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Valid => Split::Valid,
            SplitArg::Pool => Split::Pool,
        }
    }
}

pub fn parse_method(s: &str) -> Result<AggregationMethod, String> {
    s.parse()
}

pub fn parse_update(s: &str) -> Result<PoolUpdate, String> {
    s.parse()
}

pub fn parse_acquisition(s: &str) -> Result<Acquisition, String> {
    s.parse()
}

fn run(cli: Cli) -> CmdResult {
    let ctx = Ctx::new(&cli.global)?;
    match cli.command {
        Command::Synth(a) => cmd::dataset::synth(&ctx, a),
        Command::Analyze(a) => cmd::dataset::analyze(&ctx, a),
        Command::Filter(a) => cmd::dataset::filter(&ctx, a),
        Command::Schedule(a) => cmd::mosaic::schedule(&ctx, a),
        Command::Mosaic(a) => cmd::mosaic::mosaic(&ctx, a),
        Command::Score(a) => cmd::al::score(&ctx, a),
        Command::Select(a) => cmd::al::select(&ctx, a),
        Command::Eval(a) => cmd::eval::eval(&ctx, a),
        Command::Cost(a) => cmd::cost::cost(&ctx, a),
        Command::AlSim(a) => cmd::al::al_sim(&ctx, a),
        Command::Report(a) => cmd::report::report(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match catch_unwind(AssertUnwindSafe(|| run(cli))) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(f)) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
        Err(_) => {
            eprintln!("error: internal failure");
            ExitCode::from(3)
        }
    }
}

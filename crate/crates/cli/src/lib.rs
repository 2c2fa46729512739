//! Command-line front end of the spnet pruning toolkit.

mod commands;
mod config;
mod dataset;
mod report;

use std::ffi::OsString;
use std::fmt;
use std::path::Path;

use clap::{Args, Parser, Subcommand};

use config::{BaselineOpts, CommonOpts, FinetuneOpts, PruneOpts, RunConfig, TrainOpts, VerifyOpts};

pub const EXIT_USAGE: u8 = 64;
pub const EXIT_FILE: u8 = 66;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub msg: String,
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, msg: msg.into() }
    }

    pub fn file(path: &Path, e: std::io::Error) -> Self {
        Self { code: EXIT_FILE, msg: format!("{}: {e}", path.display()) }
    }

    pub fn missing(path: &Path) -> Self {
        Self { code: EXIT_FILE, msg: format!("{}: no such file or directory", path.display()) }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl From<spnet::Error> for CliError {
    fn from(e: spnet::Error) -> Self {
        use spnet::Error as E;
        let code = match e {
            E::InvalidParameter(_) | E::Dimension(_) => EXIT_USAGE,
            E::Io { .. } | E::Format(_) | E::Integrity(_) | E::Json(_) => EXIT_FILE,
            _ => 1,
        };
        Self { code, msg: e.to_string() }
    }
}

#[derive(Parser)]
#[command(name = "spnet", version, about = "Sensitivity-driven structured pruning")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonOpts,
    #[command(flatten)]
    train: TrainOpts,
}

#[derive(Args)]
struct FinetuneArgs {
    #[command(flatten)]
    common: CommonOpts,
    #[command(flatten)]
    train: TrainOpts,
    #[command(flatten)]
    finetune: FinetuneOpts,
}

#[derive(Args)]
struct PruneArgs {
    #[command(flatten)]
    common: CommonOpts,
    #[command(flatten)]
    prune: PruneOpts,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: CommonOpts,
    #[command(flatten)]
    prune: PruneOpts,
    #[command(flatten)]
    verify: VerifyOpts,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    common: CommonOpts,
    #[command(flatten)]
    baseline: BaselineOpts,
    #[arg(long)]
    calib_size: Option<usize>,
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    common: CommonOpts,
    #[command(flatten)]
    train: TrainOpts,
    #[command(flatten)]
    finetune: FinetuneOpts,
    #[command(flatten)]
    prune: PruneOpts,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model from a preset or an initial model.
    Train(TrainArgs),
    /// Retrain a (pruned) model, keeping pruned structure at zero.
    Finetune(FinetuneArgs),
    /// Compute empirical sensitivities of every prunable layer.
    Sensitivity(PruneArgs),
    /// Split a size budget across layers.
    Allocate(PruneArgs),
    /// Prune filters by sensitivity sampling.
    Prune(PruneArgs),
    /// Check the approximation guarantee empirically.
    Verify(VerifyArgs),
    /// Prune with a norm- or reconstruction-based baseline.
    Baseline(BaselineArgs),
    /// Train, then prune and fine-tune (optionally iteratively).
    Pipeline(PipelineArgs),
    /// Report loss and error of a model.
    Eval(PruneArgs),
}

impl Cmd {
    fn into_config(self) -> (&'static str, RunConfig) {
        let mut c = RunConfig::default();
        let name = match self {
            Cmd::Train(a) => {
                (c.common, c.train) = (a.common, a.train);
                "train"
            }
            Cmd::Finetune(a) => {
                (c.common, c.train, c.finetune) = (a.common, a.train, a.finetune);
                "finetune"
            }
            Cmd::Sensitivity(a) => {
                (c.common, c.prune) = (a.common, a.prune);
                "sensitivity"
            }
            Cmd::Allocate(a) => {
                (c.common, c.prune) = (a.common, a.prune);
                "allocate"
            }
            Cmd::Prune(a) => {
                (c.common, c.prune) = (a.common, a.prune);
                "prune"
            }
            Cmd::Verify(a) => {
                (c.common, c.prune, c.verify) = (a.common, a.prune, a.verify);
                "verify"
            }
            Cmd::Baseline(a) => {
                (c.common, c.baseline) = (a.common, a.baseline);
                c.prune.calib_size = a.calib_size;
                "baseline"
            }
            Cmd::Pipeline(a) => {
                (c.common, c.train, c.finetune, c.prune) = (a.common, a.train, a.finetune, a.prune);
                "pipeline"
            }
            Cmd::Eval(a) => {
                (c.common, c.prune) = (a.common, a.prune);
                "eval"
            }
        };
        c.command = Some(name.to_string());
        (name, c)
    }
}

fn setup_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("SPNET_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| CliError::usage(format!("SPNET_THREADS={v:?} is not a thread count")))?;
        // A later call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn run_inner(args: Vec<OsString>) -> Result<u8, CliError> {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return Ok(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    setup_threads()?;
    let (name, flags) = cli.cmd.into_config();
    let cfg = match flags.common.config.clone() {
        Some(path) => {
            let file = RunConfig::load(&path)?;
            if let Some(c) = &file.command {
                if c != name {
                    return Err(CliError::usage(format!(
                        "{} was written by `{c}`, not `{name}`",
                        path.display()
                    )));
                }
            }
            flags.merge(file)
        }
        None => flags,
    };
    commands::run(name, cfg)
}

/// Runs the command line `args` (program name first) and returns the exit
/// code. Errors are reported on stderr.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    match run_inner(args.into_iter().map(Into::into).collect()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("spnet: {e}");
            e.code
        }
    }
}

//! Argument parsing and dispatch.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use moeflow::SamplingMode;
use serde::Serialize;

use crate::commands::{self, EvalArgs, ModelInfo, SampleArgs};
use crate::config::{Overrides, RunConfig};
use crate::error::{CliError, CliResult, Context};

#[derive(Debug, Parser)]
#[command(
    name = "moeflow",
    version,
    about = "Vanilla and mixture-of-experts flow matching on synthetic targets"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum ModeArg {
    Sampled,
    Greedy,
}

impl From<ModeArg> for SamplingMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Sampled => SamplingMode::Sampled,
            ModeArg::Greedy => SamplingMode::Greedy,
        }
    }
}

/// Flags shared by every subcommand; each overrides the matching config key.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for training and sampling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Number of experts.
    #[arg(long)]
    pub k: Option<usize>,
    /// Responsibility kernel width.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Euler steps at sampling time.
    #[arg(long = "T", value_name = "T")]
    pub euler_steps: Option<usize>,
    /// Expert selection at t = 0.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
}

impl Common {
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let over = Overrides {
            out: self.out.clone(),
            seed: self.seed,
            steps: self.steps,
            k: self.k,
            sigma: self.sigma,
            euler_steps: self.euler_steps,
            mode: self.mode.map(Into::into),
        };
        RunConfig::resolve(self.config.as_deref(), &over)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes model.ckpt and loss.csv.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Generate samples from a checkpoint.
    Sample {
        /// Checkpoint written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of samples (default from config).
        #[arg(long)]
        n: Option<usize>,
        /// Leading trajectories to write (default from config; 0 disables).
        #[arg(long)]
        trajectories: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Score samples against the configured target; prints JSON and appends a ledger row.
    Eval {
        /// Samples or generation CSV.
        #[arg(long)]
        samples: PathBuf,
        /// Trajectory CSV for the straightness metric.
        #[arg(long)]
        trajectories: Option<PathBuf>,
        /// Read family, K and sigma from this checkpoint instead of the config.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Ledger run id (default: samples file stem).
        #[arg(long)]
        run_id: Option<String>,
        /// Ledger CSV (default: <out>/<eval.ledger>).
        #[arg(long)]
        ledger: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Check the Monte-Carlo and limit oracles; exits nonzero if any check fails.
    OracleCheck {
        /// Negative-test fixture: permute the responsibilities in the limit check.
        #[arg(long)]
        corrupt_gamma: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Render samples and trajectory CSVs as side-by-side SVG panels.
    Plot {
        /// Samples or trajectory CSVs, one panel each.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// SVG file to write.
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train, sample, evaluate and plot both families on the grid and half-moon targets.
    ReproduceFig2 {
        #[command(flatten)]
        common: Common,
    },
}

fn print_json<T: Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serialisable"));
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train { common } => {
            let cfg = common.resolve()?;
            print_json(&commands::train(&cfg)?);
        }
        Command::Sample {
            checkpoint,
            n,
            trajectories,
            common,
        } => {
            let cfg = common.resolve()?;
            let mut args = SampleArgs::from_config(&cfg, checkpoint);
            args.n = n.unwrap_or(args.n);
            args.trajectories = trajectories.unwrap_or(args.trajectories);
            print_json(&commands::sample(&args)?);
        }
        Command::Eval {
            samples,
            trajectories,
            checkpoint,
            run_id,
            ledger,
            common,
        } => {
            let cfg = common.resolve()?;
            let model = match &checkpoint {
                Some(p) => ModelInfo::of(&moeflow::Checkpoint::load(p).context(p.display().to_string())?.model),
                None => ModelInfo::from_config(&cfg),
            };
            let run_id = run_id.unwrap_or_else(|| {
                samples
                    .file_stem()
                    .map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned())
            });
            let args = EvalArgs {
                report: Some(cfg.out_dir.join(format!("{run_id}.metrics.json"))),
                ledger: Some(ledger.unwrap_or_else(|| cfg.out_dir.join(&cfg.eval.ledger))),
                samples,
                trajectories,
                run_id,
                model,
                steps: common.euler_steps,
            };
            print_json(&commands::eval(&cfg, &args)?);
        }
        Command::OracleCheck { corrupt_gamma, common } => {
            let cfg = common.resolve()?;
            let (report, path) = commands::oracle_check(&cfg, corrupt_gamma)?;
            print_json(&report);
            if !report.passed {
                let failed: Vec<&str> = report
                    .checks
                    .iter()
                    .filter(|c| !c.passed)
                    .map(|c| c.name.as_str())
                    .collect();
                return Err(CliError::Runtime(format!(
                    "{} oracle check(s) failed ({}); report at {}",
                    failed.len(),
                    failed.join(", "),
                    path.display()
                )));
            }
        }
        Command::Plot { inputs, output, common } => {
            let cfg = common.resolve()?;
            commands::plot(&inputs, &output, &cfg.plot)?;
            println!("{}", output.display());
        }
        Command::ReproduceFig2 { common } => {
            let cfg = common.resolve()?;
            for p in commands::reproduce_fig2(&cfg)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

/// Sizes the global thread pool from `MOEFLOW_THREADS` when set.
pub fn init_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("MOEFLOW_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Validation(format!("MOEFLOW_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = init_threads().and_then(|()| run(cli)) {
        eprintln!("error: {e}");
        return e.exit_code();
    }
    0
}

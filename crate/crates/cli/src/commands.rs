//! Subcommand bodies. Each returns the paths it wrote so callers and tests can
//! inspect artifacts without re-deriving file names.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use moeflow::flow::train_vfm;
use moeflow::io::{read_samples, read_trajectories, write_generation, write_losses, write_trajectories};
use moeflow::metrics::{mode_coverage, straightness_summary, MetricsReport, MmdReference};
use moeflow::moefm::{train_moefm, Generated};
use moeflow::{Checkpoint, Error, FlowModel, MixtureSpec, SamplingMode};
use serde::Serialize;

use crate::config::{Family, PlotSection, RunConfig};
use crate::error::{CliError, CliResult, Context};
use crate::oracle_suite::{run_suite, OracleReport, SuiteOptions};
use crate::plot::{render, Panel};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const DIVERGED_SUFFIX: &str = ".diverged";
pub const LOSS_FILE: &str = "loss.csv";
pub const SAMPLES_FILE: &str = "samples.csv";
pub const TRAJECTORIES_FILE: &str = "trajectories.csv";
pub const LEDGER_HEADER: &str = "run_id,model,K,sigma,T,mmd2,straightness_mean,coverage";

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// A trained model and its per-step losses.
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: FlowModel,
    pub losses: Vec<f64>,
    pub utilization: Option<Vec<f64>>,
}

/// Trains the family named in `cfg` without touching the filesystem.
pub fn fit(cfg: &RunConfig) -> moeflow::Result<Trained> {
    let train = cfg.train_config();
    match cfg.model.family {
        Family::Vfm => {
            let out = train_vfm(&cfg.dataset, &train)?;
            Ok(Trained {
                model: FlowModel::Vfm(out.field),
                losses: out.losses,
                utilization: None,
            })
        }
        Family::Moefm => {
            let out = train_moefm(&cfg.dataset, &train, &cfg.moe_config())?;
            Ok(Trained {
                model: FlowModel::MoeFm(out.model),
                losses: out.losses,
                utilization: Some(out.utilization),
            })
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub losses: PathBuf,
    pub final_loss: f64,
    pub utilization: Option<Vec<f64>>,
}

/// Trains and writes `model.ckpt`, `loss.csv` and the resolved `config.toml`.
/// On divergence the last finite parameters go to `model.ckpt.diverged`.
pub fn train(cfg: &RunConfig) -> CliResult<TrainArtifacts> {
    cfg.validate()?;
    let dir = &cfg.out_dir;
    create_dir(dir)?;
    write_text(&dir.join("config.toml"), &cfg.to_toml())?;
    let checkpoint = dir.join(CHECKPOINT_FILE);
    let trained = match fit(cfg) {
        Ok(t) => t,
        Err(Error::Diverged { step, last_finite }) => {
            let partial = dir.join(format!("{CHECKPOINT_FILE}{DIVERGED_SUFFIX}"));
            last_finite.save(&partial).context("saving partial checkpoint")?;
            return Err(CliError::Runtime(format!(
                "training diverged at step {step}; last finite parameters saved to {}",
                partial.display()
            )));
        }
        Err(e) => return Err(e).context("training"),
    };
    Checkpoint {
        model: trained.model,
        seed: cfg.training.seed,
    }
    .save(&checkpoint)
    .context("saving checkpoint")?;
    let losses = dir.join(LOSS_FILE);
    write_losses(create(&losses)?, &trained.losses).context("writing losses")?;
    Ok(TrainArtifacts {
        checkpoint,
        losses,
        final_loss: trained.losses.last().copied().unwrap_or(f64::NAN),
        utilization: trained.utilization,
    })
}

#[derive(Debug, Clone)]
pub struct SampleArgs {
    pub checkpoint: PathBuf,
    pub out_dir: PathBuf,
    pub n: usize,
    pub steps: usize,
    pub mode: SamplingMode,
    pub seed: u64,
    /// Number of leading trajectories to write; 0 skips the trajectory file.
    pub trajectories: usize,
}

impl SampleArgs {
    pub fn from_config(cfg: &RunConfig, checkpoint: PathBuf) -> Self {
        Self {
            checkpoint,
            out_dir: cfg.out_dir.clone(),
            n: cfg.sampling.n,
            steps: cfg.sampling.steps,
            mode: cfg.sampling.mode,
            seed: cfg.sampling.seed,
            trajectories: cfg.sampling.trajectories,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleArtifacts {
    pub samples: PathBuf,
    pub trajectories: Option<PathBuf>,
}

/// Writes generated samples (and trajectories) under the given file names.
pub fn write_generated(
    gen: &Generated,
    dim: usize,
    samples: &Path,
    trajectories: Option<(&Path, usize)>,
) -> CliResult<()> {
    write_generation(create(samples)?, &gen.samples, &gen.expert_ids).context("writing samples")?;
    if let Some((path, count)) = trajectories {
        let keep = &gen.trajectories[..count.min(gen.trajectories.len())];
        write_trajectories(create(path)?, keep, dim).context("writing trajectories")?;
    }
    Ok(())
}

pub fn sample(args: &SampleArgs) -> CliResult<SampleArtifacts> {
    if args.steps == 0 {
        return Err(CliError::Validation("T must be at least 1".into()));
    }
    let ck = Checkpoint::load(&args.checkpoint).context(args.checkpoint.display().to_string())?;
    let gen = ck
        .model
        .generate(args.n, args.steps, args.mode, args.seed)
        .context("generation")?;
    create_dir(&args.out_dir)?;
    let samples = args.out_dir.join(SAMPLES_FILE);
    let traj = (args.trajectories > 0).then(|| args.out_dir.join(TRAJECTORIES_FILE));
    write_generated(
        &gen,
        ck.model.dim(),
        &samples,
        traj.as_deref().map(|p| (p, args.trajectories)),
    )?;
    Ok(SampleArtifacts {
        samples,
        trajectories: traj,
    })
}

/// Model description written to the run ledger.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInfo {
    pub family: String,
    pub k: usize,
    pub sigma: Option<f64>,
}

impl ModelInfo {
    pub fn of(model: &FlowModel) -> Self {
        Self {
            family: model.family().into(),
            k: model.k(),
            sigma: model.sigma(),
        }
    }

    pub fn from_config(cfg: &RunConfig) -> Self {
        match cfg.model.family {
            Family::Vfm => Self {
                family: "vfm".into(),
                k: 1,
                sigma: None,
            },
            Family::Moefm => Self {
                family: "moefm".into(),
                k: cfg.model.k,
                sigma: Some(cfg.model.sigma),
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub samples: PathBuf,
    pub trajectories: Option<PathBuf>,
    pub run_id: String,
    pub model: ModelInfo,
    /// Euler steps, used when no trajectory file says otherwise.
    pub steps: Option<usize>,
    pub ledger: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

/// Reference draws for `cfg.dataset`, cached per call site by the caller.
pub fn reference(cfg: &RunConfig) -> CliResult<MmdReference> {
    let y = cfg
        .dataset
        .sample(cfg.eval.reference_n, cfg.eval.reference_seed)
        .context("reference samples")?;
    MmdReference::new(&y, cfg.mmd_config()).context("reference")
}

/// Metrics for in-memory samples; coverage is `None` for targets without modes.
pub fn metrics(
    spec: &MixtureSpec,
    reference: &MmdReference,
    samples: &moeflow::SampleSet,
    trajectories: Option<&[moeflow::Trajectory]>,
    coverage_radius: Option<f64>,
    steps: Option<usize>,
) -> CliResult<MetricsReport> {
    let mmd2 = reference.mmd2(samples).context("mmd")?;
    let straight = match trajectories {
        Some(t) if !t.is_empty() => Some(straightness_summary(t).context("straightness")?),
        _ => None,
    };
    let mode_coverage = match mode_coverage(samples, spec, coverage_radius) {
        Ok(c) => Some(c),
        Err(Error::Unsupported(_)) => None,
        Err(e) => return Err(e).context("coverage"),
    };
    Ok(MetricsReport {
        mmd2,
        straightness_mean: straight.map(|s| s.0),
        straightness_max: straight.map(|s| s.1),
        mode_coverage,
        n_samples: samples.len(),
        steps: trajectories.and_then(|t| t.first()).map(|t| t.steps).or(steps),
    })
}

fn opt(v: Option<impl ToString>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn ledger_row(run_id: &str, model: &ModelInfo, report: &MetricsReport) -> String {
    format!(
        "{run_id},{},{},{},{},{:.9},{},{}",
        model.family,
        model.k,
        opt(model.sigma),
        opt(report.steps),
        report.mmd2,
        opt(report.straightness_mean.map(|v| format!("{v:.9}"))),
        opt(report.mode_coverage.map(|v| format!("{v:.9}"))),
    )
}

/// Appends a row, writing the header first when the ledger is new or empty.
pub fn append_ledger(path: &Path, row: &str) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let fresh = fs::metadata(path).map_or(true, |m| m.len() == 0);
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| CliError::io(path, e))?;
    let text = if fresh {
        format!("{LEDGER_HEADER}\n{row}\n")
    } else {
        format!("{row}\n")
    };
    f.write_all(text.as_bytes()).map_err(|e| CliError::io(path, e))
}

pub fn eval(cfg: &RunConfig, args: &EvalArgs) -> CliResult<MetricsReport> {
    let table = read_samples(open(&args.samples)?).context(args.samples.display().to_string())?;
    let trajs = match &args.trajectories {
        Some(p) => Some(read_trajectories(open(p)?).context(p.display().to_string())?),
        None => None,
    };
    let reference = reference(cfg)?;
    let report = metrics(
        &cfg.dataset,
        &reference,
        &table.samples,
        trajs.as_deref(),
        cfg.eval.coverage_radius,
        args.steps,
    )?;
    let json = serde_json::to_string_pretty(&report).expect("report serialises");
    if let Some(path) = &args.report {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(parent)?;
        }
        write_text(path, &format!("{json}\n"))?;
    }
    if let Some(ledger) = &args.ledger {
        append_ledger(ledger, &ledger_row(&args.run_id, &args.model, &report))?;
    }
    Ok(report)
}

/// Runs the oracle suite and writes `oracle_report.json` into `out_dir`.
/// A failing check is reported as an error after the report is written.
pub fn oracle_check(cfg: &RunConfig, corrupt_gamma: bool) -> CliResult<(OracleReport, PathBuf)> {
    let report = run_suite(&SuiteOptions {
        mc_samples: cfg.oracle.mc_samples,
        seed: cfg.oracle.seed,
        corrupt_gamma,
    })?;
    create_dir(&cfg.out_dir)?;
    let path = cfg.out_dir.join("oracle_report.json");
    let json = serde_json::to_string_pretty(&report).expect("report serialises");
    write_text(&path, &format!("{json}\n"))?;
    Ok((report, path))
}

fn title_of(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

/// Loads a samples or trajectory CSV as a panel, telling them apart by header.
pub fn load_panel(path: &Path) -> CliResult<Panel> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let is_traj = text
        .lines()
        .next()
        .is_some_and(|h| h.split(',').any(|c| c == "traj_id"));
    let ctx = path.display().to_string();
    if is_traj {
        let trajs = read_trajectories(text.as_bytes()).context(ctx)?;
        Panel::trajectories(title_of(path), &trajs)
    } else {
        let table = read_samples(text.as_bytes()).context(ctx)?;
        Panel::points(title_of(path), &table.samples)
    }
}

pub fn plot(inputs: &[PathBuf], out: &Path, cfg: &PlotSection) -> CliResult<()> {
    let panels = inputs.iter().map(|p| load_panel(p)).collect::<CliResult<Vec<_>>>()?;
    let svg = render(&panels, cfg)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_text(out, &svg)
}

/// Step counts swept by `reproduce-fig2`.
pub const FIG2_STEPS: [usize; 4] = [1, 2, 4, 8];

/// Trains both families on the grid (K=8) and the half-moon (K=4) target,
/// samples at each step count, evaluates and plots. Returns the SVG paths.
pub fn reproduce_fig2(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    cfg.validate()?;
    let ledger = cfg.out_dir.join(&cfg.eval.ledger);
    let mut figures = Vec::new();
    for (name, spec, k) in [
        ("grid", MixtureSpec::grid_default(), 8),
        ("halfmoon", MixtureSpec::halfmoon_default(), 4),
    ] {
        let mut base = cfg.clone();
        base.dataset = spec;
        base.model.k = k;
        let reference = reference(&base)?;
        let data = base
            .dataset
            .sample(base.sampling.n, base.eval.reference_seed.wrapping_add(1))
            .context("data")?;
        for family in [Family::Vfm, Family::Moefm] {
            let mut run = base.clone();
            run.model.family = family;
            run.out_dir = cfg.out_dir.join(name).join(family.as_str());
            log::info!("training {} on {name}", family.as_str());
            let art = train(&run)?;
            let model = Checkpoint::load(&art.checkpoint).context("reloading checkpoint")?.model;
            let info = ModelInfo::of(&model);
            let mut panels = vec![Panel::points("data", &data)?];
            for &t in &FIG2_STEPS {
                let gen = model
                    .generate(run.sampling.n, t, run.sampling.mode, run.sampling.seed)
                    .context("generation")?;
                let samples = run.out_dir.join(format!("samples_T{t}.csv"));
                let traj = run.out_dir.join(format!("trajectories_T{t}.csv"));
                write_generated(&gen, model.dim(), &samples, Some((&traj, run.sampling.trajectories)))?;
                let n_traj = run.sampling.trajectories.min(gen.trajectories.len());
                let report = metrics(
                    &run.dataset,
                    &reference,
                    &gen.samples,
                    Some(&gen.trajectories[..n_traj]),
                    run.eval.coverage_radius,
                    Some(t),
                )?;
                append_ledger(
                    &ledger,
                    &ledger_row(&format!("{name}-{}-T{t}", info.family), &info, &report),
                )?;
                panels.push(Panel::points(format!("{} T={t}", info.family), &gen.samples)?);
                if t == run.sampling.steps {
                    panels.push(Panel::trajectories(
                        format!("{} paths T={t}", info.family),
                        &gen.trajectories[..n_traj],
                    )?);
                }
            }
            let svg = cfg.out_dir.join(format!("fig2_{name}_{}.svg", info.family));
            write_text(&svg, &render(&panels, &run.plot)?)?;
            figures.push(svg);
        }
    }
    Ok(figures)
}

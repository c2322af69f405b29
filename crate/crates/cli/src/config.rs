//! Declarative run configuration (TOML).
//!
//! Every key is optional; missing keys take the defaults below and unknown
//! keys are rejected. A minimal file can be empty.
//!
//! ```toml
//! format_version = 1
//! out_dir = "runs/default"
//!
//! [dataset]                 # any MixtureSpec: grid | halfmoon | explicit
//! kind = "grid"
//! side = 5
//! half_width = 2.0
//! std = 0.05
//!
//! [model]
//! family = "moefm"          # vfm | moefm
//! k = 8
//! sigma = 0.1
//! hidden = [128, 128, 128]
//! gate_hidden = []          # empty: same as hidden
//! activation = "tanh"       # tanh | gelu
//!
//! [training]
//! steps = 20000
//! batch_size = 256
//! seed = 0
//! learning_rate = 1e-3
//! beta1 = 0.9
//! beta2 = 0.999
//! weight_decay = 0.01
//! epsilon = 1e-8
//! t_epsilon = 1e-3
//! antithetic = false
//! warmup_steps = 0
//! final_fraction = 1.0
//!
//! [sampling]
//! steps = 4                 # Euler steps T
//! n = 2000
//! mode = "sampled"          # sampled | greedy
//! seed = 1
//! trajectories = 512        # trajectories written alongside samples
//!
//! [eval]
//! reference_n = 10000
//! reference_seed = 999
//! bandwidths = [0.2, 0.5, 1.0, 2.0, 5.0]
//! # coverage_radius = 0.15  # default: 3 x component std
//! ledger = "ledger.csv"     # relative to out_dir
//!
//! [oracle]
//! mc_samples = 100000
//! seed = 0
//!
//! [plot]
//! x_range = [-3.0, 3.0]
//! y_range = [-3.0, 3.0]
//! canvas = 360              # pixels per panel side
//! ```

use std::path::{Path, PathBuf};

use moeflow::flow::LrSchedule;
use moeflow::{Activation, AdamWConfig, MixtureSpec, MoeConfig, SamplingMode, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Vfm,
    Moefm,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Vfm => "vfm",
            Family::Moefm => "moefm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub family: Family,
    pub k: usize,
    pub sigma: f64,
    pub hidden: Vec<usize>,
    pub gate_hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            family: Family::Moefm,
            k: 8,
            sigma: 0.1,
            hidden: vec![128, 128, 128],
            gate_hidden: Vec::new(),
            activation: Activation::Tanh,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub epsilon: f64,
    pub t_epsilon: f64,
    pub antithetic: bool,
    pub warmup_steps: usize,
    pub final_fraction: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let base = TrainConfig::default();
        let opt = AdamWConfig::default();
        Self {
            steps: base.steps,
            batch_size: base.batch_size,
            seed: base.seed,
            learning_rate: opt.learning_rate,
            beta1: opt.beta1,
            beta2: opt.beta2,
            weight_decay: opt.weight_decay,
            epsilon: opt.epsilon,
            t_epsilon: base.t_epsilon,
            antithetic: false,
            warmup_steps: 0,
            final_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSection {
    pub steps: usize,
    pub n: usize,
    pub mode: SamplingMode,
    pub seed: u64,
    pub trajectories: usize,
}

impl Default for SamplingSection {
    fn default() -> Self {
        Self {
            steps: 4,
            n: 2000,
            mode: SamplingMode::Sampled,
            seed: 1,
            trajectories: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub reference_n: usize,
    pub reference_seed: u64,
    pub bandwidths: Vec<f64>,
    pub coverage_radius: Option<f64>,
    pub ledger: PathBuf,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            reference_n: 10_000,
            reference_seed: 999,
            bandwidths: moeflow::metrics::MmdConfig::default().bandwidths,
            coverage_radius: None,
            ledger: PathBuf::from("ledger.csv"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            mc_samples: 100_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotSection {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub canvas: u32,
}

impl Default for PlotSection {
    fn default() -> Self {
        Self {
            x_range: [-3.0, 3.0],
            y_range: [-3.0, 3.0],
            canvas: 360,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub format_version: u32,
    pub out_dir: PathBuf,
    pub dataset: MixtureSpec,
    pub model: ModelSection,
    pub training: TrainingSection,
    pub sampling: SamplingSection,
    pub eval: EvalSection,
    pub oracle: OracleSection,
    pub plot: PlotSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            format_version: CONFIG_VERSION,
            out_dir: PathBuf::from("runs/default"),
            dataset: MixtureSpec::grid_default(),
            model: ModelSection::default(),
            training: TrainingSection::default(),
            sampling: SamplingSection::default(),
            eval: EvalSection::default(),
            oracle: OracleSection::default(),
            plot: PlotSection::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub k: Option<usize>,
    pub sigma: Option<f64>,
    pub euler_steps: Option<usize>,
    pub mode: Option<SamplingMode>,
}

impl RunConfig {
    /// Parses TOML text; errors carry the line and key of the offending entry.
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Validation(m) => CliError::Validation(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Loads `path` if given, else the defaults, then applies `over`.
    pub fn resolve(path: Option<&Path>, over: &Overrides) -> CliResult<Self> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply(over);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, over: &Overrides) {
        if let Some(o) = &over.out {
            self.out_dir = o.clone();
        }
        if let Some(s) = over.seed {
            self.training.seed = s;
            self.sampling.seed = s;
        }
        if let Some(s) = over.steps {
            self.training.steps = s;
        }
        if let Some(k) = over.k {
            self.model.k = k;
        }
        if let Some(s) = over.sigma {
            self.model.sigma = s;
        }
        if let Some(t) = over.euler_steps {
            self.sampling.steps = t;
        }
        if let Some(m) = over.mode {
            self.sampling.mode = m;
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serialisable")
    }

    /// Shared optimisation settings in library form.
    pub fn train_config(&self) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            steps: t.steps,
            batch_size: t.batch_size,
            seed: t.seed,
            hidden: self.model.hidden.clone(),
            activation: self.model.activation,
            optimizer: AdamWConfig {
                learning_rate: t.learning_rate,
                beta1: t.beta1,
                beta2: t.beta2,
                weight_decay: t.weight_decay,
                epsilon: t.epsilon,
            },
            t_epsilon: t.t_epsilon,
            antithetic: t.antithetic,
            schedule: LrSchedule {
                warmup_steps: t.warmup_steps,
                final_fraction: t.final_fraction,
            },
        }
    }

    pub fn moe_config(&self) -> MoeConfig {
        MoeConfig {
            k: self.model.k,
            sigma: self.model.sigma,
            gate_hidden: self.model.gate_hidden.clone(),
            ..MoeConfig::default()
        }
    }

    pub fn mmd_config(&self) -> moeflow::metrics::MmdConfig {
        moeflow::metrics::MmdConfig {
            bandwidths: self.eval.bandwidths.clone(),
        }
    }

    /// Checks everything that can be checked without running anything.
    pub fn validate(&self) -> CliResult<()> {
        let field = |name: &str, e: moeflow::Error| CliError::Validation(format!("{name}: {e}"));
        if self.format_version != CONFIG_VERSION {
            return Err(CliError::Validation(format!(
                "format_version: {} is not supported (expected {CONFIG_VERSION})",
                self.format_version
            )));
        }
        self.dataset.validate().map_err(|e| field("dataset", e))?;
        self.train_config().validate().map_err(|e| field("training", e))?;
        // K is checked for both families so a bad value never slips through unused.
        self.moe_config().validate().map_err(|e| field("model", e))?;
        if self.sampling.steps == 0 {
            return Err(CliError::Validation("sampling.steps: T must be at least 1".into()));
        }
        self.mmd_config().validate().map_err(|e| field("eval.bandwidths", e))?;
        if let Some(r) = self.eval.coverage_radius {
            if !(r > 0.0 && r.is_finite()) {
                return Err(CliError::Validation(format!(
                    "eval.coverage_radius: must be positive, got {r}"
                )));
            }
        }
        if self.eval.reference_n < 2 {
            return Err(CliError::Validation(
                "eval.reference_n: need at least 2 reference samples".into(),
            ));
        }
        if self.oracle.mc_samples == 0 {
            return Err(CliError::Validation("oracle.mc_samples: must be positive".into()));
        }
        let [x0, x1] = self.plot.x_range;
        let [y0, y1] = self.plot.y_range;
        if !(x0 < x1 && y0 < y1 && [x0, x1, y0, y1].iter().all(|v| v.is_finite())) {
            return Err(CliError::Validation(
                "plot: ranges must be finite and increasing".into(),
            ));
        }
        if self.plot.canvas < 32 {
            return Err(CliError::Validation("plot.canvas: at least 32 pixels".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn documented_example_parses() {
        let doc = include_str!("config.rs");
        let example: String = doc
            .lines()
            .skip_while(|l| !l.starts_with("//! ```toml"))
            .skip(1)
            .take_while(|l| !l.starts_with("//! ```"))
            .map(|l| l.trim_start_matches("//!").trim_start_matches(' '))
            .collect::<Vec<_>>()
            .join("\n");
        let cfg = RunConfig::from_toml(&example).unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let err = RunConfig::from_toml("[model]\nk = 3\nwidth = 5\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("width") && msg.contains("line 3"), "{msg}");
        assert!(RunConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn zero_experts_rejected() {
        let err = RunConfig::from_toml("[model]\nk = 0\n").unwrap_err();
        assert!(matches!(err, CliError::Validation(_)), "{err}");
        assert!(RunConfig::from_toml("format_version = 2").is_err());
    }

    #[test]
    fn overrides_win() {
        let over = Overrides {
            seed: Some(7),
            steps: Some(10),
            k: Some(2),
            sigma: Some(0.5),
            euler_steps: Some(8),
            mode: Some(SamplingMode::Greedy),
            out: Some("x".into()),
        };
        let cfg = RunConfig::resolve(None, &over).unwrap();
        assert_eq!((cfg.training.seed, cfg.training.steps, cfg.model.k), (7, 10, 2));
        assert_eq!((cfg.model.sigma, cfg.sampling.steps), (0.5, 8));
        assert_eq!(cfg.sampling.mode, SamplingMode::Greedy);
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }
}

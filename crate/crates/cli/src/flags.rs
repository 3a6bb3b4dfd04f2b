//! Flag definitions and the conversions from flags to library configs.

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hydrofit::dataset::VdotSource;
use hydrofit::models::Family;
use hydrofit::selection::HyperRanges;
use hydrofit::{FitConfig, ModelSpec};
use serde::Serialize;

/// A flag combination that parses but cannot be honoured. Exits with 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage<T>(msg: impl Into<String>) -> anyhow::Result<T> {
    Err(UsageError(msg.into()).into())
}

#[derive(Debug, Parser)]
#[command(
    name = "hydrofit",
    version,
    about = "Pressure-model identification for hydraulic soft actuators"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset from the reference actuator.
    Simulate(SimulateArgs),
    /// Fit one model and report its metrics.
    Fit(FitArgs),
    /// Fit a hyperparameter grid and rank it by joint cost.
    Select(SelectArgs),
    /// Correlations and principal components of (v, v̇, v̈, P).
    Pca(PcaArgs),
    /// Pointwise stiffness and damping of a polynomial model.
    Diagnose(DiagnoseArgs),
    /// Structural-break test between two datasets.
    Chow(ChowArgs),
    /// External force from three chamber models and pressure streams.
    Force(ForceArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VdotFlag {
    /// Use derivative columns from the file when present.
    File,
    /// Recompute v̇ and v̈ from v.
    Differentiate,
}

impl From<VdotFlag> for VdotSource {
    fn from(f: VdotFlag) -> Self {
        match f {
            VdotFlag::File => VdotSource::File,
            VdotFlag::Differentiate => VdotSource::Differentiate,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InputArgs {
    /// Where v̇ comes from for fitting.
    #[arg(long, value_enum, default_value = "file")]
    pub vdot_source: VdotFlag,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long, default_value = "runs/simulate")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Measurement noise, kPa.
    #[arg(long, default_value_t = 0.3)]
    pub noise: f64,
    /// Trapped air volume, mm³.
    #[arg(long, default_value_t = 0.0)]
    pub air: f64,
    /// Hysteresis offset gain, kPa.
    #[arg(long, default_value_t = 0.0)]
    pub hysteresis: f64,
    /// Constant offset added to measured pressure, kPa.
    #[arg(long, default_value_t = 0.0)]
    pub load_offset: f64,
    #[arg(long, default_value_t = 550.0)]
    pub v_max: f64,
    /// Comma-separated flow rates, mm³/s.
    #[arg(long, value_delimiter = ',', default_value = "20,40,60,80,100")]
    pub rates: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    pub cycles: usize,
    #[arg(long, default_value_t = 25.0)]
    pub sample_rate: f64,
    /// Truth file replacing the reference law (as written to truth.json).
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SpecArgs {
    #[arg(long)]
    pub family: Family,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    /// Excluded monomials as `i:j`, comma separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_term)]
    pub mask: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 256)]
    pub batch: usize,
    #[arg(long, default_value_t = 8)]
    pub multistart: usize,
    #[arg(long, default_value_t = 200)]
    pub lm_max_iter: usize,
}

impl TrainArgs {
    pub fn config(&self) -> FitConfig {
        FitConfig {
            lm_max_iter: self.lm_max_iter,
            nn_epochs: self.epochs,
            nn_lr: self.lr,
            nn_batch: self.batch,
            seed: self.seed,
            multistart: self.multistart,
            ..FitConfig::default()
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    /// Input CSV.
    pub data: PathBuf,
    #[command(flatten)]
    pub spec: SpecArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub input: InputArgs,
    /// Score on a held-out share of trajectories instead of the training set.
    #[arg(long)]
    pub holdout: Option<f64>,
    #[arg(long, default_value = "runs/fit")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SelectArgs {
    pub data: PathBuf,
    #[arg(long)]
    pub family: Family,
    /// Values as `a..b` (inclusive), `a,b,c` or a single number.
    #[arg(long, value_parser = parse_range)]
    pub k: Option<Values>,
    #[arg(long, value_parser = parse_range)]
    pub n: Option<Values>,
    #[arg(long, value_parser = parse_range)]
    pub m: Option<Values>,
    #[arg(long, value_parser = parse_range)]
    pub p: Option<Values>,
    #[arg(long, value_parser = parse_range)]
    pub d: Option<Values>,
    #[arg(long, default_value_t = 1.0)]
    pub w1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub w2: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub w3: f64,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub holdout: Option<f64>,
    #[arg(long, default_value = "runs/select")]
    pub out: PathBuf,
}

impl SelectArgs {
    pub fn ranges(&self) -> HyperRanges {
        let def = HyperRanges::default();
        HyperRanges {
            k: self.k.clone().map_or(def.k, |v| v.0),
            n: self.n.clone().map_or(def.n, |v| v.0),
            m: self.m.clone().map_or(def.m, |v| v.0),
            p: self.p.clone().map_or(def.p, |v| v.0),
            d: self.d.clone().map_or(def.d, |v| v.0),
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PcaArgs {
    pub data: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value = "runs/pca")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DiagnoseArgs {
    /// Model JSON written by `fit`.
    pub model: PathBuf,
    pub data: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value = "runs/diagnose")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ChowArgs {
    pub first: PathBuf,
    pub second: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub m: usize,
    /// Lag order; zero fits a plain polynomial.
    #[arg(long, default_value_t = 0)]
    pub p: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value = "runs/chow")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ForceArgs {
    /// Three model files, one per chamber.
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    pub models: Vec<PathBuf>,
    /// Three pressure streams, aligned sample for sample.
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    pub streams: Vec<PathBuf>,
    /// Effective chamber areas, mm².
    #[arg(long, value_delimiter = ',', default_value = "22,22,22")]
    pub areas: Vec<f64>,
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value = "runs/force")]
    pub out: PathBuf,
}

fn parse_term(s: &str) -> Result<(usize, usize), String> {
    let (i, j) = s.split_once(':').ok_or_else(|| format!("expected `i:j`, got `{s}`"))?;
    let num = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("`{x}`: {e}"));
    Ok((num(i)?, num(j)?))
}

/// Hyperparameter values for a grid flag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct Values(pub Vec<usize>);

/// `1..4` and `1..=4` are both inclusive.
pub fn parse_range(s: &str) -> Result<Values, String> {
    let num = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("`{x}`: {e}"));
    if let Some((a, b)) = s.split_once("..") {
        let b = b.strip_prefix('=').unwrap_or(b);
        let (a, b) = (num(a)?, num(b)?);
        if a > b {
            return Err(format!("empty range `{s}`"));
        }
        return Ok(Values((a..=b).collect()));
    }
    let mut out: Vec<usize> = s.split(',').map(num).collect::<Result<_, _>>()?;
    out.sort_unstable();
    out.dedup();
    Ok(Values(out))
}

impl SpecArgs {
    pub fn build(&self) -> anyhow::Result<ModelSpec> {
        let need = |v: Option<usize>, name: &str| match v {
            Some(x) => Ok(x),
            None => usage(format!("--{name} is required for family {}", self.family)),
        };
        let allowed: &[&str] = match self.family {
            Family::Exponential => &["k"],
            Family::Poly => &["n", "m"],
            Family::PolyAr => &["p", "n", "m"],
            Family::Nn => &["d"],
            Family::NnAr => &["p", "d"],
        };
        for (name, v) in [
            ("k", self.k),
            ("n", self.n),
            ("m", self.m),
            ("p", self.p),
            ("d", self.d),
        ] {
            if v.is_some() && !allowed.contains(&name) {
                return usage(format!("--{name} does not apply to family {}", self.family));
            }
        }
        if !self.mask.is_empty() && !self.family.is_poly() {
            return usage("--mask applies to polynomial families only");
        }
        let spec = match self.family {
            Family::Exponential => ModelSpec::exponential(need(self.k, "k")?),
            Family::Poly => ModelSpec::poly(need(self.n, "n")?, need(self.m, "m")?),
            Family::PolyAr => ModelSpec::poly_ar(need(self.p, "p")?, need(self.n, "n")?, need(self.m, "m")?),
            Family::Nn => ModelSpec::nn(need(self.d, "d")?),
            Family::NnAr => ModelSpec::nn_ar(need(self.p, "p")?, need(self.d, "d")?),
        };
        let spec = spec.and_then(|s| s.with_mask(self.mask.iter().copied()));
        spec.map_err(|e| UsageError(e.to_string()).into())
    }
}

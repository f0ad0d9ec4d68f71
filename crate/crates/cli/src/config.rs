//! Run configuration: JSON file, environment and flags merged into one
//! validated [`Settings`] value before anything is computed.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Deserialize;
use stockbound_core::demand::{DemandModel, GaussianModel, ModelSpec};
use stockbound_core::policy::delta_grid;
use stockbound_core::LeadTime;

/// Input the user got wrong. Maps to exit code 2.
#[derive(Debug, Clone, PartialEq)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub(crate) fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub const DEFAULT_SIGMA: f64 = 1.0;
pub const DEFAULT_RHO: f64 = 0.9;
pub const DEFAULT_LEAD: u32 = 10;
pub const DEFAULT_TRIALS: u64 = 1_000_000;
pub const DEFAULT_GRID: &str = "log:0.001:0.5:40";
pub const DEFAULT_U_GRID: &str = "lin:-1:1:21";

/// Built-in Gaussian presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// One commodity.
    Gauss1,
    /// Two commodities with equal variance and correlation `--rho`.
    Gauss2,
}

/// A grid of values: either an explicit list or `log:lo:hi:n` / `lin:lo:hi:n`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    List(Vec<f64>),
    Text(String),
}

impl GridSpec {
    pub fn parse(text: &str) -> anyhow::Result<Vec<f64>> {
        let parts: Vec<&str> = text.split(':').collect();
        match parts.as_slice() {
            [kind @ ("log" | "lin"), lo, hi, n] => {
                let lo: f64 = lo.trim().parse().map_err(|_| usage(format!("bad grid bound {lo:?}")))?;
                let hi: f64 = hi.trim().parse().map_err(|_| usage(format!("bad grid bound {hi:?}")))?;
                let n: usize = n.trim().parse().map_err(|_| usage(format!("bad grid size {n:?}")))?;
                if *kind == "log" {
                    return Ok(delta_grid(lo, hi, n)?);
                }
                if !(lo <= hi) || n == 0 {
                    return Err(usage(format!("bad grid {text:?}")));
                }
                if n == 1 {
                    return Ok(vec![lo]);
                }
                let last = (n - 1) as f64;
                Ok((0..n)
                    .map(|i| (lo * (last - i as f64) + hi * i as f64) / last)
                    .collect())
            }
            [_] => text
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| usage(format!("bad grid value {v:?}")))
                })
                .collect(),
            _ => Err(usage(format!("bad grid {text:?}; expected a list or log:lo:hi:n"))),
        }
    }

    fn values(&self) -> anyhow::Result<Vec<f64>> {
        match self {
            GridSpec::List(v) => Ok(v.clone()),
            GridSpec::Text(t) => Self::parse(t),
        }
    }
}

/// Contents of a `--config` JSON file. Every field is optional; flags win.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<ModelSpec>,
    pub preset: Option<Preset>,
    pub sigma: Option<f64>,
    pub rho: Option<f64>,
    #[serde(rename = "L", alias = "lead")]
    pub lead: Option<u32>,
    pub delta: Option<f64>,
    pub grid: Option<GridSpec>,
    pub seed: Option<u64>,
    pub trials: Option<u64>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))
    }

    /// Resolves a relative empirical data path against `dir`.
    fn relative_to(mut self, dir: &Path) -> Self {
        if let Some(ModelSpec::Empirical { path, .. }) = &mut self.model {
            if path.is_relative() {
                *path = dir.join(&*path);
            }
        }
        self
    }
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Built-in Gaussian model.
    #[arg(long, value_enum)]
    pub model: Option<Preset>,
    /// Per-period standard deviation of each commodity.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Correlation between the two commodities.
    #[arg(long, allow_negative_numbers = true)]
    pub rho: Option<f64>,
    /// Lead time in periods.
    #[arg(long = "L", value_name = "L")]
    pub lead: Option<u32>,
    /// Allowable stockout rate.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Stockout-rate grid: comma list or log:lo:hi:n.
    #[arg(long)]
    pub grid: Option<String>,
    /// Monte Carlo trials.
    #[arg(long)]
    pub trials: Option<u64>,
    /// Random seed.
    #[arg(long, env = "STOCKBOUND_SEED")]
    pub seed: Option<u64>,
    /// Output CSV path (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Fully resolved inputs.
#[derive(Debug, Clone)]
pub struct Settings {
    pub model: DemandModel,
    pub lead: LeadTime,
    pub delta: Option<f64>,
    pub grid: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub trials: u64,
    pub out: Option<PathBuf>,
}

fn check_delta(d: f64) -> anyhow::Result<f64> {
    if d > 0.0 && d < 1.0 {
        Ok(d)
    } else {
        Err(usage(format!("stockout rate {d} must lie strictly between 0 and 1")))
    }
}

impl Settings {
    pub fn resolve(args: &CommonArgs) -> anyhow::Result<Self> {
        let file = match &args.config {
            Some(p) => RunConfig::load(p)?.relative_to(p.parent().unwrap_or(Path::new(""))),
            None => RunConfig::default(),
        };
        let sigma = args.sigma.or(file.sigma).unwrap_or(DEFAULT_SIGMA);
        let rho = args.rho.or(file.rho).unwrap_or(DEFAULT_RHO);
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(usage(format!("--sigma must be positive, got {sigma}")));
        }
        if !(-1.0..=1.0).contains(&rho) {
            return Err(usage(format!("--rho must lie in [-1, 1], got {rho}")));
        }
        let preset = args.model.or(file.preset);
        let model = match (preset, &file.model) {
            (Some(p), _) => preset_model(p, sigma, rho)?,
            (None, Some(spec)) => spec.build().map_err(|e| usage(format!("invalid model: {e}")))?,
            (None, None) => preset_model(Preset::Gauss2, sigma, rho)?,
        };
        let lead = LeadTime::new(args.lead.or(file.lead).unwrap_or(DEFAULT_LEAD)).map_err(|e| usage(e.to_string()))?;
        let delta = args.delta.or(file.delta).map(check_delta).transpose()?;
        let grid = match (&args.grid, &file.grid) {
            (Some(t), _) => Some(GridSpec::parse(t)?),
            (None, Some(g)) => Some(g.values()?),
            (None, None) => None,
        };
        if let Some(g) = &grid {
            if g.is_empty() {
                return Err(usage("empty stockout-rate grid"));
            }
            for &d in g {
                check_delta(d)?;
            }
        }
        let trials = args.trials.or(file.trials).unwrap_or(DEFAULT_TRIALS);
        Ok(Self {
            model,
            lead,
            delta,
            grid,
            seed: args.seed.or(file.seed),
            trials,
            out: args.out.clone().or(file.out),
        })
    }

    pub fn gaussian(&self) -> anyhow::Result<&GaussianModel> {
        match &self.model {
            DemandModel::Gaussian(m) => Ok(m),
            _ => Err(usage("this command needs a Gaussian model")),
        }
    }

    pub fn require_seed(&self) -> anyhow::Result<u64> {
        self.seed
            .ok_or_else(|| usage("a seed is required (--seed or STOCKBOUND_SEED)"))
    }

    /// `--delta` as a one-point grid, else `--grid`, else `fallback`.
    pub fn deltas(&self, fallback: Option<&str>) -> anyhow::Result<Vec<f64>> {
        if let Some(d) = self.delta {
            return Ok(vec![d]);
        }
        if let Some(g) = &self.grid {
            return Ok(g.clone());
        }
        match fallback {
            Some(text) => GridSpec::parse(text),
            None => Err(usage("missing --delta (or --grid)")),
        }
    }
}

fn preset_model(preset: Preset, sigma: f64, rho: f64) -> anyhow::Result<DemandModel> {
    let m = match preset {
        Preset::Gauss1 => GaussianModel::univariate(sigma * sigma),
        Preset::Gauss2 => GaussianModel::bivariate(sigma, sigma, rho),
    };
    Ok(DemandModel::Gaussian(m.map_err(|e| usage(e.to_string()))?))
}

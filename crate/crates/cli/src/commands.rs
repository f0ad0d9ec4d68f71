//! Subcommand implementations. Each writes one CSV table.

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use stockbound_core::cgf::{EmpiricalCgf, WeibullCgf, EMPIRICAL_WINDOW};
use stockbound_core::demand::{load_demand_csv, DemandModel, GaussianModel};
use stockbound_core::oracle::{joint_tail_monte_carlo, MIN_TRIALS};
use stockbound_core::policy::{ss_proposed, Allocation};
use stockbound_core::rate::invert_rate;
use stockbound_core::{Cgf, StockoutPattern};

use crate::config::{usage, CommonArgs, GridSpec, Settings, DEFAULT_GRID, DEFAULT_U_GRID};
use crate::figures::{estimation_errors, policy_curves, ESTIMATION_SIZES};

#[derive(Debug, Parser)]
#[command(
    name = "stockbound",
    version,
    about = "Chernoff-bound safety stock for correlated demand"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Safety stocks and stockout probabilities of the three policies.
    Compute(CommonArgs),
    /// Curve data for a comparison figure.
    Figure(FigureArgs),
    /// Simulate demand and check the proposed stock against its target.
    Validate(ValidateArgs),
    /// Empirical CGF of a demand CSV, with Chebyshev half-widths.
    EstimateCgf(EstimateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Figure {
    /// Safety-stock ratios against the rigorous stock.
    Fig1,
    /// Stockout probability divided by the target.
    Fig2,
    /// Empirical CGF estimation error.
    Figest,
}

#[derive(Debug, Args)]
pub struct FigureArgs {
    #[arg(value_enum)]
    pub which: Figure,
    /// `u` grid for figest: comma list or lin:lo:hi:n.
    #[arg(long = "u", value_name = "GRID", allow_hyphen_values = true)]
    pub u_grid: Option<String>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Common safety stock to test instead of the proposed one.
    #[arg(long)]
    pub ss: Option<f64>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Demand CSV: one replicate per row, one period per column.
    #[arg(long)]
    pub data: PathBuf,
    /// The first CSV line is a header.
    #[arg(long)]
    pub header: bool,
    /// `u` grid: comma list or lin:lo:hi:n.
    #[arg(long = "u", value_name = "GRID", allow_hyphen_values = true)]
    pub u_grid: Option<String>,
    /// Chebyshev multiplier `C`.
    #[arg(long, default_value_t = 3.0)]
    pub multiplier: f64,
    /// Largest `|u|` evaluated.
    #[arg(long, default_value_t = EMPIRICAL_WINDOW)]
    pub window: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Result of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    /// The simulated stockout rate exceeded its tolerance.
    BoundViolated,
}

pub fn run(cli: Cli) -> anyhow::Result<Outcome> {
    match cli.command {
        Command::Compute(args) => compute(&Settings::resolve(&args)?),
        Command::Figure(args) => figure(&args),
        Command::Validate(args) => validate(&args),
        Command::EstimateCgf(args) => estimate_cgf(&args),
    }
}

fn writer(out: Option<&Path>) -> anyhow::Result<csv::Writer<Box<dyn Write>>> {
    let sink: Box<dyn Write> = match out {
        Some(p) => Box::new(File::create(p).map_err(|e| usage(format!("cannot write {}: {e}", p.display())))?),
        None => Box::new(io::stdout().lock()),
    };
    Ok(csv::Writer::from_writer(sink))
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn compute(s: &Settings) -> anyhow::Result<Outcome> {
    let deltas = s.deltas(None)?;
    let mut w = writer(s.out.as_deref())?;
    match &s.model {
        DemandModel::Gaussian(m) => {
            check_comparable(m)?;
            w.write_record([
                "delta",
                "ss_pre",
                "ss_pro",
                "ss_rig",
                "p_pre",
                "p_pro",
                "p_rig",
                "ratio_pro",
                "ratio_pre",
            ])?;
            for r in policy_curves(m, s.lead, &deltas)? {
                w.write_record([
                    r.delta.to_string(),
                    r.ss_pre.to_string(),
                    r.ss_pro.to_string(),
                    r.ss_rig.to_string(),
                    r.p_pre.to_string(),
                    r.p_pro.to_string(),
                    r.p_rig.to_string(),
                    cell(r.ratio_pro()),
                    cell(r.ratio_pre()),
                ])?;
            }
        }
        DemandModel::Weibull(m) => inverted_rows(&mut w, &WeibullCgf::new(*m), s, &deltas)?,
        DemandModel::Empirical(d) => inverted_rows(&mut w, &EmpiricalCgf::centered(d)?, s, &deltas)?,
    }
    w.flush()?;
    Ok(Outcome::Ok)
}

fn check_comparable(m: &GaussianModel) -> anyhow::Result<()> {
    let ok = match m.dim() {
        1 => true,
        2 => (m.sigma_x2() - m.sigma_y2()).abs() <= 1e-12 * m.sigma_x2().max(m.sigma_y2()),
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(usage(
            "policy comparison needs one commodity or two with equal variance",
        ))
    }
}

fn inverted_rows<W: Write>(w: &mut csv::Writer<W>, cgf: &impl Cgf, s: &Settings, deltas: &[f64]) -> anyhow::Result<()> {
    w.write_record(["delta", "ss_pro", "rate", "residual"])?;
    for &d in deltas {
        let inv = invert_rate(cgf, d, s.lead)?;
        w.write_record([
            d.to_string(),
            inv.safety_stock.to_string(),
            inv.target.to_string(),
            inv.residual.to_string(),
        ])?;
    }
    Ok(())
}

pub fn figure(args: &FigureArgs) -> anyhow::Result<Outcome> {
    let s = Settings::resolve(&args.common)?;
    let mut w = writer(s.out.as_deref())?;
    match args.which {
        Figure::Fig1 | Figure::Fig2 => {
            let m = s.gaussian()?;
            check_comparable(m)?;
            let rows = policy_curves(m, s.lead, &s.deltas(Some(DEFAULT_GRID))?)?;
            if args.which == Figure::Fig1 {
                w.write_record(["delta", "ratio_pro", "ratio_pre"])?;
                for r in rows {
                    w.write_record([r.delta.to_string(), cell(r.ratio_pro()), cell(r.ratio_pre())])?;
                }
            } else {
                w.write_record(["delta", "stockout_ratio_pro", "stockout_ratio_pre"])?;
                for r in rows {
                    w.write_record([
                        r.delta.to_string(),
                        r.stockout_ratio_pro().to_string(),
                        r.stockout_ratio_pre().to_string(),
                    ])?;
                }
            }
        }
        Figure::Figest => {
            let seed = s.require_seed()?;
            let us = GridSpec::parse(args.u_grid.as_deref().unwrap_or(DEFAULT_U_GRID))?;
            let mut header = vec!["u".to_string()];
            header.extend(ESTIMATION_SIZES.iter().map(|m| format!("error_m{m}")));
            w.write_record(&header)?;
            for (u, errs) in us.iter().zip(estimation_errors(&ESTIMATION_SIZES, &us, seed)?) {
                let mut rec = vec![u.to_string()];
                rec.extend(errs.iter().map(f64::to_string));
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;
    Ok(Outcome::Ok)
}

/// Pass threshold `delta + 3 sqrt(delta (1 - delta) / n)`.
pub fn tolerance(delta: f64, trials: u64) -> f64 {
    delta + 3.0 * (delta * (1.0 - delta) / trials as f64).sqrt()
}

pub fn validate(args: &ValidateArgs) -> anyhow::Result<Outcome> {
    let s = Settings::resolve(&args.common)?;
    let m = s.gaussian()?;
    let seed = s.require_seed()?;
    let delta = s.delta.unwrap_or(0.05);
    if s.trials < MIN_TRIALS {
        return Err(usage(format!("validation needs at least {MIN_TRIALS} trials")));
    }
    let stock = match args.ss {
        Some(ss) if ss.is_finite() => vec![ss; m.dim()],
        Some(ss) => return Err(usage(format!("--ss must be finite, got {ss}"))),
        None => {
            let allocation = match m.dim() {
                2 if check_comparable(m).is_ok() => Allocation::Symmetric,
                2 => Allocation::Sequential,
                _ => Allocation::EqualMargin,
            };
            ss_proposed(m, s.lead, delta, allocation)?.safety_stock
        }
    };
    let r = joint_tail_monte_carlo(m, &stock, s.lead, s.trials, seed, &StockoutPattern::AllExceed)?;
    let threshold = tolerance(delta, s.trials);
    let pass = r.probability <= threshold;
    let mut w = writer(s.out.as_deref())?;
    let mut header: Vec<String> = ["delta", "trials", "seed"].map(String::from).to_vec();
    header.extend((1..=stock.len()).map(|i| format!("ss_{i}")));
    header.extend(["stockouts", "empirical_rate", "threshold", "result"].map(String::from));
    w.write_record(&header)?;
    let mut rec = vec![delta.to_string(), s.trials.to_string(), seed.to_string()];
    rec.extend(stock.iter().map(f64::to_string));
    rec.extend([
        ((r.probability * s.trials as f64).round() as u64).to_string(),
        r.probability.to_string(),
        threshold.to_string(),
        if pass { "pass" } else { "fail" }.to_string(),
    ]);
    w.write_record(&rec)?;
    w.flush()?;
    Ok(if pass { Outcome::Ok } else { Outcome::BoundViolated })
}

pub fn estimate_cgf(args: &EstimateArgs) -> anyhow::Result<Outcome> {
    let data = load_demand_csv(&args.data, args.header)?;
    let raw = EmpiricalCgf::new(&data)?.with_window(args.window)?;
    let centered = EmpiricalCgf::centered(&data)?.with_window(args.window)?;
    let us = GridSpec::parse(args.u_grid.as_deref().unwrap_or(DEFAULT_U_GRID))?;
    let mut w = writer(args.out.as_deref())?;
    w.write_record([
        "u",
        "cgf",
        "cgf_centered",
        "mgf",
        "std_dev",
        "half_width",
        "failure_bound",
    ])?;
    for u in us {
        let cert = stockbound_core::cgf::estimation_certificate(&data, u, args.multiplier)?;
        w.write_record([
            u.to_string(),
            raw.value(&[u])?.to_string(),
            centered.value(&[u])?.to_string(),
            cert.mgf_estimate.to_string(),
            cert.std_dev.to_string(),
            cert.half_width.to_string(),
            cell(cert.failure_bound),
        ])?;
    }
    w.flush()?;
    Ok(Outcome::Ok)
}

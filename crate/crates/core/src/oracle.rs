//! Exact stockout probabilities for Gaussian demand.
//!
//! * [`normal_tail`] and its inverse for one commodity;
//! * [`bivariate_joint_tail`] for two, by two independent quadratures;
//! * [`joint_tail_monte_carlo`] for any dimension and any
//!   [`StockoutPattern`].

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;

use rayon::prelude::*;

use crate::demand::{stream_rng, GaussianModel, LeadTime};
use crate::error::{check_probability, Error, Result};
use crate::quadrature::integrate;
use crate::rate::{Side, StockoutPattern};

/// Outer truncation of the quadratures, in standard units past the threshold.
pub const TRUNCATION: f64 = 10.0;
/// Required quadrature error estimate.
pub const QUADRATURE_TOLERANCE: f64 = 1e-8;
/// Trials per Monte Carlo chunk; chunk `c` draws from stream `c`.
pub const CHUNK_TRIALS: u64 = 1 << 14;
pub const MIN_TRIALS: u64 = 10_000;

// below this the standard normal mass is < 2e-33
const LOWER_CLIP: f64 = -12.0;

/// Upper tail of the standard normal, `H(k) = P(Z >= k)`.
pub fn normal_tail(k: f64) -> f64 {
    0.5 * libm::erfc(k * FRAC_1_SQRT_2)
}

fn normal_density(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// `k` with `H(k) = delta`, by bisection down to adjacent floats.
pub fn normal_tail_inverse(delta: f64) -> Result<f64> {
    check_probability(delta)?;
    let (mut lo, mut hi) = (-40.0_f64, 40.0_f64);
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if normal_tail(mid) > delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(if (normal_tail(lo) - delta).abs() <= (normal_tail(hi) - delta).abs() {
        lo
    } else {
        hi
    })
}

/// Standardized two-commodity tail query `P(X >= a, Y >= b)` for unit
/// normals with correlation `rho`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailQuery {
    pub a: f64,
    pub b: f64,
    pub rho: f64,
}

impl TailQuery {
    pub fn new(a: f64, b: f64, rho: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) {
            return Err(Error::InvalidParameter("tail thresholds must be finite".into()));
        }
        if !(-1.0..=1.0).contains(&rho) {
            return Err(Error::InvalidParameter(format!("correlation {rho} outside [-1, 1]")));
        }
        Ok(Self { a, b, rho })
    }

    /// Standardizes lead-time safety stocks `L eps_X`, `L eps_Y`:
    /// `a = L eps_X / sqrt(L sigma_X^2)`.
    pub fn from_safety_stock(model: &GaussianModel, stock: [f64; 2], lead: LeadTime) -> Result<Self> {
        model.require_dim(2)?;
        let l = lead.as_f64();
        let (sx, sy) = ((l * model.sigma_x2()).sqrt(), (l * model.sigma_y2()).sqrt());
        if !(sx > 0.0 && sy > 0.0) {
            return Err(Error::InvalidModel("joint tail needs positive variances".into()));
        }
        Self::new(stock[0] / sx, stock[1] / sy, model.rho())
    }
}

/// How an oracle probability was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OracleMethod {
    /// One-dimensional integral of the conditional tail,
    /// `int_a^inf phi(u) H((b - rho u) / sqrt(1 - rho^2)) du`.
    Conditional,
    /// Two-dimensional integral in decorrelated coordinates.
    DoubleIntegral,
    MonteCarlo,
}

impl fmt::Display for OracleMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OracleMethod::Conditional => "quadrature-conditional",
            OracleMethod::DoubleIntegral => "quadrature-double",
            OracleMethod::MonteCarlo => "monte-carlo",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleResult {
    pub probability: f64,
    pub method: OracleMethod,
    /// Quadrature error estimate, or the 3-sigma binomial half-width.
    pub error: f64,
    /// Trials used (Monte Carlo only).
    pub trials: Option<u64>,
}

impl OracleResult {
    fn exact(probability: f64, method: OracleMethod, error: f64) -> Self {
        Self {
            probability: probability.clamp(0.0, 1.0),
            method,
            error,
            trials: None,
        }
    }
}

/// `P(X >= a, Y >= b)` for standard normals with correlation `rho`.
///
/// `rho = +-1` is resolved analytically. Both quadratures truncate
/// [`TRUNCATION`] standard units past the threshold; the truncated mass is
/// added to the reported error.
pub fn bivariate_joint_tail(q: TailQuery, method: OracleMethod) -> Result<OracleResult> {
    let TailQuery { a, b, rho } = q;
    if rho == 1.0 {
        return Ok(OracleResult::exact(normal_tail(a.max(b)), method, 0.0));
    }
    if rho == -1.0 {
        // Y = -X: P(a <= X <= -b)
        return Ok(OracleResult::exact(
            (normal_tail(a) - normal_tail(-b)).max(0.0),
            method,
            0.0,
        ));
    }
    let c = (1.0 - rho * rho).sqrt();
    let (lo_x, hi_x) = (a.max(LOWER_CLIP), a.max(0.0) + TRUNCATION);
    let (lo_y, hi_y) = (b.max(LOWER_CLIP), b.max(0.0) + TRUNCATION);
    let truncated = normal_tail(hi_x) + normal_tail(hi_y) + 2.0 * normal_tail(-LOWER_CLIP);
    let (value, error, converged) = match method {
        OracleMethod::Conditional => {
            let kink = if rho != 0.0 { vec![b / rho] } else { vec![] };
            let r = integrate(
                |u| normal_density(u) * normal_tail((b - rho * u) / c),
                lo_x,
                hi_x,
                &kink,
                1e-15,
                1e-12,
                2000,
            );
            (r.value, r.error, r.converged)
        }
        OracleMethod::DoubleIntegral => {
            // x = c s, y = c t:  (c / 2 pi) exp(-(s^2 + t^2)/2 + rho s t)
            let (s0, s1, t0, t1) = (lo_x / c, hi_x / c, lo_y / c, hi_y / c);
            let mut inner_error = 0.0_f64;
            let mut inner_ok = true;
            let outer = integrate(
                |s| {
                    let r = integrate(
                        |t| (-0.5 * (s * s + t * t) + rho * s * t).exp(),
                        t0,
                        t1,
                        &[rho * s],
                        1e-16,
                        1e-13,
                        2000,
                    );
                    inner_error = inner_error.max(r.error);
                    inner_ok &= r.converged;
                    r.value * c / (2.0 * PI)
                },
                s0,
                s1,
                &[0.0],
                1e-15,
                1e-12,
                2000,
            );
            let inner_total = inner_error * (s1 - s0) * c / (2.0 * PI);
            (outer.value, outer.error + inner_total, outer.converged && inner_ok)
        }
        OracleMethod::MonteCarlo => {
            return Err(Error::InvalidParameter(
                "use joint_tail_monte_carlo for simulated probabilities".into(),
            ))
        }
    };
    let error = error + truncated;
    if !converged && error > QUADRATURE_TOLERANCE {
        return Err(Error::Quadrature { achieved: error });
    }
    Ok(OracleResult::exact(value, method, error))
}

fn event_holds(pattern: &StockoutPattern, totals: &[f64], thresholds: &[f64]) -> bool {
    match pattern {
        StockoutPattern::AllExceed => totals.iter().zip(thresholds).all(|(x, t)| x >= t),
        StockoutPattern::SignedOrthant(sides) => totals.iter().zip(thresholds).zip(sides).all(|((x, t), s)| match s {
            Side::Above => x >= t,
            Side::Below => x <= t,
        }),
        StockoutPattern::UnionOfTwo => totals[0] >= thresholds[0] || totals[1] >= thresholds[1],
        StockoutPattern::FungibleSum => totals.iter().sum::<f64>() >= thresholds[0],
    }
}

/// Runs `trials` lead-time simulations in fixed-size chunks (chunk `c` uses
/// stream `c` of `seed`) and folds each chunk's centered totals with `visit`.
/// The chunk schedule does not depend on the thread count.
pub(crate) fn simulate_chunks<T, V, R>(
    model: &GaussianModel,
    lead: LeadTime,
    trials: u64,
    seed: u64,
    visit: V,
    reduce: R,
) -> T
where
    T: Send + Default,
    V: Fn(&[f64], &mut T) + Sync,
    R: Fn(T, T) -> T + Sync + Send,
{
    let n = model.dim();
    let chunks = trials.div_ceil(CHUNK_TRIALS);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c);
            let count = CHUNK_TRIALS.min(trials - c * CHUNK_TRIALS);
            let mut z = vec![0.0; n];
            let mut totals = vec![0.0; n];
            let mut acc = T::default();
            for _ in 0..count {
                model.draw_lead_time_total(&mut rng, lead, &mut z, &mut totals);
                visit(&totals, &mut acc);
            }
            acc
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(T::default(), reduce)
}

/// Empirical frequency of the stockout event over `trials` simulated lead
/// times, each the sum of `L` i.i.d. `N(0, Sigma)` draws. `safety_stock`
/// holds the thresholds `L eps` (one value for the fungible pattern).
pub fn joint_tail_monte_carlo(
    model: &GaussianModel,
    safety_stock: &[f64],
    lead: LeadTime,
    trials: u64,
    seed: u64,
    pattern: &StockoutPattern,
) -> Result<OracleResult> {
    if trials < MIN_TRIALS {
        return Err(Error::InvalidParameter(format!(
            "need at least {MIN_TRIALS} trials, got {trials}"
        )));
    }
    pattern.validate(model.dim(), safety_stock.len())?;
    let hits: u64 = simulate_chunks(
        model,
        lead,
        trials,
        seed,
        |totals, acc: &mut u64| {
            if event_holds(pattern, totals, safety_stock) {
                *acc += 1;
            }
        },
        |a, b| a + b,
    );
    let p = hits as f64 / trials as f64;
    Ok(OracleResult {
        probability: p,
        method: OracleMethod::MonteCarlo,
        error: 3.0 * (p * (1.0 - p) / trials as f64).sqrt(),
        trials: Some(trials),
    })
}

/// Rigorous safety stock with equal margins on both commodities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigorousStock {
    pub safety_stock: f64,
    /// Joint stockout probability at `safety_stock`.
    pub probability: f64,
    /// `delta >= P(0)`: no safety stock is needed and 0 is returned.
    pub saturated: bool,
}

/// Joint stockout probability when both commodities hold `stock`.
pub fn joint_stockout_probability(model: &GaussianModel, stock: f64, lead: LeadTime) -> Result<f64> {
    let q = TailQuery::from_safety_stock(model, [stock, stock], lead)?;
    Ok(bivariate_joint_tail(q, OracleMethod::Conditional)?.probability)
}

/// Inverts `P(SS) = P(SS <= X, SS <= Y)` by bisection so that
/// `|P(SS) - delta| < 1e-9`.
pub fn invert_joint_tail(model: &GaussianModel, delta: f64, lead: LeadTime) -> Result<RigorousStock> {
    check_probability(delta)?;
    model.require_dim(2)?;
    let p = |ss: f64| joint_stockout_probability(model, ss, lead);
    let p0 = p(0.0)?;
    if delta >= p0 {
        return Ok(RigorousStock {
            safety_stock: 0.0,
            probability: p0,
            saturated: true,
        });
    }
    let scale = (lead.as_f64() * model.sigma_x2().max(model.sigma_y2())).sqrt();
    let (mut lo, mut hi) = (0.0, scale);
    while p(hi)? > delta {
        lo = hi;
        hi *= 2.0;
    }
    let mut p_hi = p(hi)?;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let pm = p(mid)?;
        if pm > delta {
            lo = mid;
        } else {
            hi = mid;
            p_hi = pm;
        }
        if (p_hi - delta).abs() < 1e-13 {
            break;
        }
    }
    Ok(RigorousStock {
        safety_stock: hi,
        probability: p_hi,
        saturated: false,
    })
}

/// Equal-margin rigorous safety stock for any dimension from simulation:
/// the upper `delta` quantile of `min_i X_i`.
pub fn invert_joint_tail_monte_carlo(
    model: &GaussianModel,
    delta: f64,
    lead: LeadTime,
    trials: u64,
    seed: u64,
) -> Result<RigorousStock> {
    check_probability(delta)?;
    if trials < MIN_TRIALS {
        return Err(Error::InvalidParameter(format!(
            "need at least {MIN_TRIALS} trials, got {trials}"
        )));
    }
    let mut mins: Vec<f64> = simulate_chunks(
        model,
        lead,
        trials,
        seed,
        |totals, acc: &mut Vec<f64>| acc.push(totals.iter().copied().fold(f64::INFINITY, f64::min)),
        |mut a, b| {
            a.extend(b);
            a
        },
    );
    mins.sort_by(|x, y| y.total_cmp(x));
    let n = mins.len();
    let p0 = mins.iter().filter(|&&m| m >= 0.0).count() as f64 / n as f64;
    if delta >= p0 {
        return Ok(RigorousStock {
            safety_stock: 0.0,
            probability: p0,
            saturated: true,
        });
    }
    // largest k with k/n <= delta; the k-th largest minimum is the threshold
    let k = ((delta * n as f64).floor() as usize).max(1);
    let ss = mins[k - 1].max(0.0);
    let probability = mins.iter().take_while(|&&m| m >= ss).count() as f64 / n as f64;
    Ok(RigorousStock {
        safety_stock: ss,
        probability,
        saturated: false,
    })
}

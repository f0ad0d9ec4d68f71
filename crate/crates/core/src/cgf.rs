//! Cumulant generating functions and their gradients.
//!
//! A [`Cgf`] evaluates the per-period joint CGF
//! `psi(u) = (1/L) log E[exp(sum_i u_i sum_t X_it)]`, which for demand that
//! is i.i.d. over time equals the one-period CGF `log E[exp(u . X_t)]`.
//! The further `1/N` per-degree normalization lives in [`crate::rate`].

use std::ops::RangeInclusive;

use nalgebra::{DMatrix, DVector};

use crate::demand::{EmpiricalDemand, GaussianModel, WeibullModel};
use crate::error::{Error, Result};

/// Default relative truncation tolerance for the Weibull MGF series.
pub const SERIES_TOLERANCE: f64 = 1e-16;
/// Hard cap on Weibull series terms.
pub const SERIES_MAX_TERMS: usize = 500;
/// Default `|u|` window for empirical CGF evaluation.
pub const EMPIRICAL_WINDOW: f64 = 5.0;

/// Set of `u` on which a CGF is finite, one closed interval per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    Everywhere,
    Box(Vec<RangeInclusive<f64>>),
}

impl Domain {
    pub fn contains(&self, u: &[f64]) -> bool {
        match self {
            Domain::Everywhere => true,
            Domain::Box(ranges) => ranges.iter().zip(u).all(|(r, x)| r.contains(x)),
        }
    }
}

/// Cumulant generating function of centered per-period demand.
pub trait Cgf {
    fn dim(&self) -> usize;

    fn domain(&self) -> Domain {
        Domain::Everywhere
    }

    fn value(&self, u: &[f64]) -> Result<f64>;

    fn gradient(&self, u: &[f64]) -> Result<Vec<f64>>;
}

impl<C: Cgf + ?Sized> Cgf for &C {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn domain(&self) -> Domain {
        (**self).domain()
    }

    fn value(&self, u: &[f64]) -> Result<f64> {
        (**self).value(u)
    }

    fn gradient(&self, u: &[f64]) -> Result<Vec<f64>> {
        (**self).gradient(u)
    }
}

fn check_dim(expected: usize, u: &[f64]) -> Result<()> {
    if u.len() == expected {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected,
            found: u.len(),
        })
    }
}

/// `psi(u) = u^T Sigma u / 2`.
#[derive(Debug, Clone)]
pub struct GaussianCgf {
    cov: DMatrix<f64>,
}

impl GaussianCgf {
    pub fn new(model: &GaussianModel) -> Self {
        Self {
            cov: model.covariance().clone(),
        }
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }
}

impl Cgf for GaussianCgf {
    fn dim(&self) -> usize {
        self.cov.nrows()
    }

    fn value(&self, u: &[f64]) -> Result<f64> {
        check_dim(self.dim(), u)?;
        let v = DVector::from_column_slice(u);
        Ok(0.5 * v.dot(&(&self.cov * &v)))
    }

    fn gradient(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), u)?;
        let v = DVector::from_column_slice(u);
        Ok((&self.cov * v).as_slice().to_vec())
    }
}

/// Gaussian CGF of centered demand at `u`.
pub fn cgf_gaussian(model: &GaussianModel, u: &[f64]) -> Result<f64> {
    GaussianCgf::new(model).value(u)
}

/// Truncated MGF series result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesValue {
    /// `log` of the (raw, non-centered) MGF.
    pub value: f64,
    /// `d/du log MGF`.
    pub derivative: f64,
    pub terms: usize,
}

/// Raw Weibull log-MGF from `E[e^{uX}] = sum_k (u beta)^k Gamma(k/alpha + 1) / k!`.
///
/// Certified only for `alpha > 1`; `alpha == 1` uses the exponential closed
/// form `-log(1 - u beta)`.
pub fn cgf_weibull_series(model: &WeibullModel, u: f64, tol: f64) -> Result<SeriesValue> {
    if !u.is_finite() {
        return Err(Error::Domain(format!("u = {u} is not finite")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter("series tolerance must be positive".into()));
    }
    if u == 0.0 {
        return Ok(SeriesValue {
            value: 0.0,
            derivative: model.mean(),
            terms: 1,
        });
    }
    let (alpha, beta) = (model.shape(), model.scale());
    if alpha == 1.0 {
        if u * beta >= 1.0 {
            return Err(Error::Domain(format!(
                "exponential MGF is infinite for u >= 1/beta (u = {u})"
            )));
        }
        return Ok(SeriesValue {
            value: -(-u * beta).ln_1p(),
            derivative: beta / (1.0 - u * beta),
            terms: 0,
        });
    }
    if alpha < 1.0 {
        return Err(Error::Domain(format!(
            "MGF series not certified convergent for shape {alpha} <= 1"
        )));
    }

    // Terms in log space: log|t_k| = k log|u beta| + lgamma(k/alpha + 1) - lgamma(k + 1).
    // The derivative series is sum_{k>=1} k t_k / u.
    let log_ub = (u * beta).abs().ln();
    let negative = u < 0.0;
    let mut sum = 1.0;
    let mut dsum = 0.0;
    for k in 1..=SERIES_MAX_TERMS {
        let kf = k as f64;
        let log_term = kf * log_ub + libm::lgamma(kf / alpha + 1.0) - libm::lgamma(kf + 1.0);
        let mut term = log_term.exp();
        if negative && k % 2 == 1 {
            term = -term;
        }
        sum += term;
        dsum += kf * term;
        if term.abs() < tol * sum.abs() {
            if !(sum > 0.0) {
                return Err(Error::Domain(format!(
                    "alternating MGF series lost all precision at u = {u}"
                )));
            }
            return Ok(SeriesValue {
                value: sum.ln(),
                derivative: dsum / (u * sum),
                terms: k + 1,
            });
        }
    }
    Err(Error::Divergence {
        terms: SERIES_MAX_TERMS,
    })
}

/// Weibull CGF, centered by `u E[X]` unless built with [`WeibullCgf::raw`].
#[derive(Debug, Clone)]
pub struct WeibullCgf {
    model: WeibullModel,
    tol: f64,
    centered: bool,
}

impl WeibullCgf {
    pub fn new(model: WeibullModel) -> Self {
        Self {
            model,
            tol: SERIES_TOLERANCE,
            centered: true,
        }
    }

    pub fn raw(model: WeibullModel) -> Self {
        Self {
            centered: false,
            ..Self::new(model)
        }
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    fn offset(&self) -> f64 {
        if self.centered {
            self.model.mean()
        } else {
            0.0
        }
    }
}

impl Cgf for WeibullCgf {
    fn dim(&self) -> usize {
        1
    }

    fn domain(&self) -> Domain {
        let (alpha, beta) = (self.model.shape(), self.model.scale());
        if alpha > 1.0 {
            Domain::Everywhere
        } else if alpha == 1.0 {
            Domain::Box(vec![f64::NEG_INFINITY..=(1.0 / beta).next_down()])
        } else {
            Domain::Box(vec![0.0..=0.0])
        }
    }

    fn value(&self, u: &[f64]) -> Result<f64> {
        check_dim(1, u)?;
        let s = cgf_weibull_series(&self.model, u[0], self.tol)?;
        Ok(s.value - u[0] * self.offset())
    }

    fn gradient(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_dim(1, u)?;
        let s = cgf_weibull_series(&self.model, u[0], self.tol)?;
        Ok(vec![s.derivative - self.offset()])
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Sample-based CGF `(1/L) log((1/M) sum_a exp(u sum_t D_ta))`, evaluated
/// with log-sum-exp.
#[derive(Debug, Clone)]
pub struct EmpiricalCgf {
    sums: Vec<f64>,
    periods: usize,
    window: f64,
    center: f64,
}

impl EmpiricalCgf {
    /// Raw (non-centered) estimator.
    pub fn new(data: &EmpiricalDemand) -> Result<Self> {
        if data.replicates() < 2 {
            return Err(Error::InvalidParameter(format!(
                "empirical CGF needs at least 2 replicates, got {}",
                data.replicates()
            )));
        }
        Ok(Self {
            sums: data.row_sums(),
            periods: data.periods(),
            window: EMPIRICAL_WINDOW,
            center: 0.0,
        })
    }

    /// Estimator of the centered CGF, subtracting the sample mean of the totals.
    pub fn centered(data: &EmpiricalDemand) -> Result<Self> {
        let mut cgf = Self::new(data)?;
        cgf.center = cgf.sums.iter().sum::<f64>() / cgf.sums.len() as f64;
        Ok(cgf)
    }

    pub fn with_window(mut self, window: f64) -> Result<Self> {
        if !(window > 0.0) {
            return Err(Error::InvalidParameter("u window must be positive".into()));
        }
        self.window = window;
        Ok(self)
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    fn check_window(&self, u: f64) -> Result<()> {
        if u.abs() <= self.window {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "u = {u} is outside the empirical window |u| <= {}",
                self.window
            )))
        }
    }
}

impl Cgf for EmpiricalCgf {
    fn dim(&self) -> usize {
        1
    }

    fn domain(&self) -> Domain {
        Domain::Box(vec![-self.window..=self.window])
    }

    fn value(&self, u: &[f64]) -> Result<f64> {
        check_dim(1, u)?;
        let u = u[0];
        self.check_window(u)?;
        if u == 0.0 {
            return Ok(0.0);
        }
        let lse = log_sum_exp(self.sums.iter().map(|s| u * s));
        let l = self.periods as f64;
        Ok((lse - (self.sums.len() as f64).ln()) / l - u * self.center / l)
    }

    fn gradient(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_dim(1, u)?;
        let u = u[0];
        self.check_window(u)?;
        // exponentially tilted mean of the totals
        let max = self.sums.iter().map(|s| u * s).fold(f64::NEG_INFINITY, f64::max);
        let (mut num, mut den) = (0.0, 0.0);
        for s in &self.sums {
            let w = (u * s - max).exp();
            num += w * s;
            den += w;
        }
        Ok(vec![(num / den - self.center) / self.periods as f64])
    }
}

/// Raw empirical CGF estimate at `u` with the default window.
pub fn cgf_empirical(data: &EmpiricalDemand, u: f64) -> Result<f64> {
    EmpiricalCgf::new(data)?.value(&[u])
}

/// Chebyshev certificate for the empirical MGF at `u`: with probability at
/// least `1 - 1/(M C^2)`, the sample MGF is within `C` standard deviations of
/// `e^{u sum D}` (the half-width) of the true MGF.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimationCertificate {
    pub samples: usize,
    pub multiplier: f64,
    /// `1/(M C^2)`, present only when it is below 1.
    pub failure_bound: Option<f64>,
    pub mgf_estimate: f64,
    pub std_dev: f64,
    pub half_width: f64,
}

pub fn estimation_certificate(data: &EmpiricalDemand, u: f64, multiplier: f64) -> Result<EstimationCertificate> {
    if !(multiplier > 0.0 && multiplier.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "multiplier C must be positive, got {multiplier}"
        )));
    }
    let m = data.replicates();
    if m < 2 {
        return Err(Error::InvalidParameter(format!(
            "certificate needs at least 2 replicates, got {m}"
        )));
    }
    let mf = m as f64;
    let exps: Vec<f64> = data.row_sums().iter().map(|s| (u * s).exp()).collect();
    let mean = exps.iter().sum::<f64>() / mf;
    let var = exps.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (mf - 1.0);
    let std_dev = var.sqrt();
    let mc2 = mf * multiplier * multiplier;
    Ok(EstimationCertificate {
        samples: m,
        multiplier,
        failure_bound: (mc2 > 1.0).then(|| 1.0 / mc2),
        mgf_estimate: mean,
        std_dev,
        half_width: multiplier * std_dev,
    })
}

//! Rate functions (Legendre transforms of the CGF), their inversion, and the
//! Chernoff bounds they produce.
//!
//! Two normalizations appear here:
//!
//! * the **total** rate `R(eps) = max_{u >= 0} { u . eps - psi(u) }`, so the
//!   lead-time bound is `exp(-L R)`;
//! * the **per-degree** rate `R(eps) / N`, for which the same bound reads
//!   `exp(-L N R)`.
//!
//! [`RateResult`] stores the total and exposes both.

use nalgebra::{DMatrix, DVector};

use crate::cgf::{Cgf, Domain, GaussianCgf};
use crate::demand::{GaussianModel, LeadTime};
use crate::error::{check_probability, Error, Result};

/// Settings for the projected gradient ascent.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Step constant `kappa`.
    pub step: f64,
    /// Stop once `sum_i |u_{s+1,i} - u_{s,i}|` falls below this.
    pub stop: f64,
    pub max_iterations: usize,
    /// Starting point; `(1, ..., 1)` when `None`.
    pub initial: Option<Vec<f64>>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            stop: 1e-6,
            max_iterations: 1_000_000,
            initial: None,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.stop > 0.0 && self.max_iterations >= 1) {
            return Err(Error::InvalidParameter(
                "solver needs step > 0, stop > 0 and at least one iteration".into(),
            ));
        }
        Ok(())
    }
}

/// Value of a rate function at a margin `eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateResult {
    /// Per-period margin `eps` (items/period).
    pub margin: Vec<f64>,
    /// Total rate in nats; `f64::INFINITY` when unbounded.
    pub total: f64,
    /// Maximizing `u*` (nonnegative).
    pub maximizer: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl RateResult {
    fn zero(margin: &[f64]) -> Self {
        Self {
            margin: margin.to_vec(),
            total: 0.0,
            maximizer: vec![0.0; margin.len()],
            iterations: 0,
            converged: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.margin.len()
    }

    /// Rate per degree of freedom (`total / N`).
    pub fn per_degree(&self) -> f64 {
        self.total / self.dim() as f64
    }

    /// `exp(-L R)`, clamped to `[0, 1]`.
    pub fn bound(&self, lead: LeadTime) -> f64 {
        (-lead.as_f64() * self.total).exp().min(1.0)
    }
}

fn check_margin(cgf: &impl Cgf, eps: &[f64]) -> Result<()> {
    if eps.len() != cgf.dim() {
        return Err(Error::DimensionMismatch {
            expected: cgf.dim(),
            found: eps.len(),
        });
    }
    if eps.iter().any(|e| !e.is_finite()) {
        return Err(Error::InvalidParameter("margin must be finite".into()));
    }
    Ok(())
}

fn objective(cgf: &impl Cgf, u: &[f64], eps: &[f64]) -> Result<f64> {
    let dot: f64 = u.iter().zip(eps).map(|(a, b)| a * b).sum();
    Ok(dot - cgf.value(u)?)
}

/// Projected gradient ascent `u <- max(u + kappa (eps - grad psi(u)), 0)`.
///
/// `kappa` is halved whenever a step leaves the CGF's domain or lowers the
/// objective. Hitting the iteration cap returns `converged = false`; the
/// reported rate is still a valid (possibly loose) Chernoff exponent because
/// it is the objective at a feasible `u`.
pub fn rate_numeric(cgf: &impl Cgf, eps: &[f64], cfg: &SolverConfig) -> Result<RateResult> {
    check_margin(cgf, eps)?;
    cfg.validate()?;
    if eps.iter().all(|&e| e <= 0.0) {
        return Ok(RateResult::zero(eps));
    }
    let n = eps.len();
    let domain = cgf.domain();
    let mut u = match &cfg.initial {
        Some(init) if init.len() == n => init.iter().map(|v| v.max(0.0)).collect(),
        Some(init) => {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: init.len(),
            })
        }
        None => vec![1.0; n],
    };
    // pull the start inside the domain; u = 0 always is
    let mut f = loop {
        if domain.contains(&u) {
            if let Ok(f) = objective(cgf, &u, eps) {
                break f;
            }
        }
        if u.iter().all(|&x| x == 0.0) {
            return Err(Error::Domain("CGF cannot be evaluated at u = 0".into()));
        }
        u.iter_mut().for_each(|x| *x = if *x < 1e-300 { 0.0 } else { *x * 0.5 });
    };

    let mut step = cfg.step;
    let mut next = vec![0.0; n];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        let grad = cgf.gradient(&u)?;
        for i in 0..n {
            next[i] = (u[i] + step * (eps[i] - grad[i])).max(0.0);
        }
        let accepted = domain.contains(&next)
            && match objective(cgf, &next, eps) {
                Ok(fn_) if fn_ >= f - 1e-14 * (1.0 + f.abs()) => {
                    f = fn_;
                    true
                }
                _ => false,
            };
        if !accepted {
            step *= 0.5;
            if step < f64::MIN_POSITIVE {
                return Err(Error::Domain(
                    "step size underflowed while staying in the CGF domain".into(),
                ));
            }
            continue;
        }
        iterations += 1;
        let delta: f64 = next.iter().zip(&u).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut u, &mut next);
        if delta < cfg.stop {
            converged = true;
            break;
        }
    }
    Ok(RateResult {
        margin: eps.to_vec(),
        total: f.max(0.0),
        maximizer: u,
        iterations,
        converged,
    })
}

/// Largest `u` in `[lo, hi]` at which `psi'` can be evaluated, assuming `lo` works.
fn feasible_edge(cgf: &impl Cgf, domain: &Domain, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if domain.contains(&[mid]) && cgf.gradient(&[mid]).is_ok() && cgf.value(&[mid]).is_ok() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Exact one-dimensional Legendre transform: solves `psi'(u) = eps` for
/// `u >= 0` by bracketed bisection.
///
/// When `psi'` stays below `eps` up to the edge of the domain the supremum is
/// taken at the edge.
pub fn legendre_scalar(cgf: &impl Cgf, eps: f64) -> Result<RateResult> {
    check_margin(cgf, &[eps])?;
    if cgf.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            found: cgf.dim(),
        });
    }
    if eps <= 0.0 {
        return Ok(RateResult::zero(&[eps]));
    }
    let domain = cgf.domain();
    let slope = |u: f64| -> Option<f64> {
        if !domain.contains(&[u]) {
            return None;
        }
        cgf.gradient(&[u]).ok().map(|g| g[0])
    };
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut iterations = 0;
    let mut at_edge = false;
    loop {
        iterations += 1;
        match slope(hi) {
            Some(g) if g >= eps => break,
            Some(_) => {
                lo = hi;
                if hi >= 2f64.powi(60) {
                    at_edge = true;
                    break;
                }
                hi *= 2.0;
            }
            None => {
                let edge = feasible_edge(cgf, &domain, lo, hi);
                match slope(edge) {
                    Some(g) if g >= eps => {
                        hi = edge;
                        break;
                    }
                    _ => {
                        lo = edge;
                        at_edge = true;
                        break;
                    }
                }
            }
        }
    }
    let u = if at_edge {
        lo
    } else {
        for _ in 0..300 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            iterations += 1;
            match slope(mid) {
                Some(g) if g < eps => lo = mid,
                _ => hi = mid,
            }
        }
        // the better of the two bracket ends
        let (flo, fhi) = (
            objective(cgf, &[lo], &[eps]).unwrap_or(f64::NEG_INFINITY),
            objective(cgf, &[hi], &[eps]).unwrap_or(f64::NEG_INFINITY),
        );
        if flo >= fhi {
            lo
        } else {
            hi
        }
    };
    Ok(RateResult {
        margin: vec![eps],
        total: objective(cgf, &[u], &[eps])?.max(0.0),
        maximizer: vec![u],
        iterations,
        converged: true,
    })
}

/// Gaussian rate `R = eps^T Sigma^{-1} eps / 2` when `u* = Sigma^{-1} eps >= 0`;
/// otherwise the exact constrained optimum, found by enumerating the active
/// set of the nonnegativity constraints (KKT conditions of a concave
/// quadratic). Unbounded problems (singular `Sigma`, `eps` outside its
/// range) report `f64::INFINITY`.
///
/// For two commodities and an interior optimum, `L * total` is the exponent
/// `L (eX^2/sX^2 - 2 rho eX eY/(sX sY) + eY^2/sY^2) / (2 (1 - rho^2))`.
pub fn rate_gaussian_closed(model: &GaussianModel, eps: &[f64]) -> Result<RateResult> {
    let cgf = GaussianCgf::new(model);
    check_margin(&cgf, eps)?;
    if eps.iter().all(|&e| e <= 0.0) {
        return Ok(RateResult::zero(eps));
    }
    let n = eps.len();
    if n > 16 {
        return rate_numeric(&cgf, eps, &SolverConfig::default());
    }
    let cov = model.covariance();
    let scale = cov.trace().max(f64::MIN_POSITIVE) + eps.iter().map(|e| e.abs()).sum::<f64>();
    let tol = 1e-12 * scale;
    let mut best: Option<(f64, Vec<f64>)> = None;
    // full set first: the common interior case
    let mut subsets: Vec<u32> = vec![(1u32 << n) - 1];
    subsets.extend((1..(1u32 << n) - 1).rev());
    for mask in subsets {
        let free: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let k = free.len();
        let sub = DMatrix::from_fn(k, k, |a, b| cov[(free[a], free[b])]);
        let rhs = DVector::from_iterator(k, free.iter().map(|&i| eps[i]));
        let Ok(uf) = sub.clone().pseudo_inverse(1e-13 * scale) else {
            continue;
        };
        let uf = uf * &rhs;
        if (&sub * &uf - &rhs).amax() > tol || uf.iter().any(|&x| x < -tol) {
            continue;
        }
        let mut u = vec![0.0; n];
        for (a, &i) in free.iter().enumerate() {
            u[i] = uf[a].max(0.0);
        }
        let su = cov * DVector::from_column_slice(&u);
        let dual_ok = (0..n).filter(|i| mask & (1 << i) == 0).all(|j| eps[j] - su[j] <= tol);
        if !dual_ok {
            continue;
        }
        let value = 0.5 * free.iter().map(|&i| u[i] * eps[i]).sum::<f64>();
        if best.as_ref().is_none_or(|(b, _)| value > *b) {
            best = Some((value, u));
        }
        if mask == (1u32 << n) - 1 {
            break;
        }
    }
    Ok(match best {
        Some((total, maximizer)) => RateResult {
            margin: eps.to_vec(),
            total: total.max(0.0),
            maximizer,
            iterations: 0,
            converged: true,
        },
        None => RateResult {
            margin: eps.to_vec(),
            total: f64::INFINITY,
            maximizer: vec![f64::INFINITY; n],
            iterations: 0,
            converged: true,
        },
    })
}

/// Safety stock obtained by inverting the rate function.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedStock {
    /// `L eps`, items over the lead time.
    pub safety_stock: f64,
    /// Per-period margin `eps`.
    pub margin: f64,
    /// Target rate `-(1/L) log delta`.
    pub target: f64,
    /// `|R(eps) - target|`.
    pub residual: f64,
}

/// Solves `R(eps) = -(1/L) log delta` for the smallest `eps >= 0`, returning
/// `L eps`. `R` is evaluated with [`legendre_scalar`].
pub fn invert_rate(cgf: &impl Cgf, delta: f64, lead: LeadTime) -> Result<InvertedStock> {
    check_probability(delta)?;
    if cgf.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            found: cgf.dim(),
        });
    }
    let l = lead.as_f64();
    let target = -delta.ln() / l;
    let rate = |e: f64| legendre_scalar(cgf, e).map(|r| r.total);
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while rate(hi)? < target {
        lo = hi;
        hi *= 2.0;
        if hi > 2f64.powi(60) {
            return Err(Error::UnreachableRate { target });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if rate(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let r_hi = rate(hi)?;
    Ok(InvertedStock {
        safety_stock: l * hi,
        margin: hi,
        target,
        residual: (r_hi - target).abs(),
    })
}

/// Direction of a per-commodity stockout condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    /// Lead-time demand at or above the threshold (`L eps <= X`).
    Above,
    /// Lead-time demand at or below the threshold (`X <= L eps`).
    Below,
}

impl Side {
    fn sign(self) -> f64 {
        match self {
            Side::Above => 1.0,
            Side::Below => -1.0,
        }
    }
}

/// Which stockout event a bound or oracle refers to.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum StockoutPattern {
    /// Every commodity stocks out: `L eps_i <= X_i` for all `i`.
    AllExceed,
    /// Each commodity on its own side of its threshold.
    SignedOrthant(Vec<Side>),
    /// Two commodities, at least one stocks out.
    UnionOfTwo,
    /// Substitutable commodities: `L eps <= sum_i X_i`, with a single margin.
    FungibleSum,
}

impl StockoutPattern {
    /// Number of margin coordinates the pattern expects for `dim` commodities.
    pub fn margin_len(&self, dim: usize) -> usize {
        match self {
            StockoutPattern::FungibleSum => 1,
            _ => dim,
        }
    }

    pub(crate) fn validate(&self, dim: usize, margin_len: usize) -> Result<()> {
        match self {
            StockoutPattern::SignedOrthant(sides) if sides.len() != dim => {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: sides.len(),
                })
            }
            StockoutPattern::UnionOfTwo if dim != 2 => {
                return Err(Error::DimensionMismatch {
                    expected: 2,
                    found: dim,
                })
            }
            _ => {}
        }
        let expected = self.margin_len(dim);
        if margin_len != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: margin_len,
            });
        }
        Ok(())
    }
}

/// A stockout event: per-period margins, lead time, and pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct StockoutQuery {
    pub margin: Vec<f64>,
    pub lead: LeadTime,
    pub pattern: StockoutPattern,
}

impl StockoutQuery {
    pub fn new(margin: Vec<f64>, lead: LeadTime, pattern: StockoutPattern) -> Self {
        Self { margin, lead, pattern }
    }

    /// Thresholds `L eps` over the lead time.
    pub fn safety_stock(&self) -> Vec<f64> {
        self.margin.iter().map(|e| e * self.lead.as_f64()).collect()
    }
}

/// CGF of `(s_1 X_1, ..., s_N X_N)`.
pub struct Signed<C> {
    inner: C,
    signs: Vec<f64>,
}

impl<C: Cgf> Signed<C> {
    pub fn new(inner: C, sides: &[Side]) -> Self {
        Self {
            inner,
            signs: sides.iter().map(|s| s.sign()).collect(),
        }
    }

    fn flip(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(&self.signs).map(|(a, s)| a * s).collect()
    }
}

impl<C: Cgf> Cgf for Signed<C> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn domain(&self) -> Domain {
        match self.inner.domain() {
            Domain::Everywhere => Domain::Everywhere,
            Domain::Box(ranges) => Domain::Box(
                ranges
                    .into_iter()
                    .zip(&self.signs)
                    .map(|(r, &s)| if s > 0.0 { r } else { -*r.end()..=-*r.start() })
                    .collect(),
            ),
        }
    }

    fn value(&self, u: &[f64]) -> Result<f64> {
        self.inner.value(&self.flip(u))
    }

    fn gradient(&self, u: &[f64]) -> Result<Vec<f64>> {
        Ok(self.flip(&self.inner.gradient(&self.flip(u))?))
    }
}

/// One-dimensional CGF of the marginal `X_index`.
pub struct Marginal<C> {
    inner: C,
    index: usize,
}

impl<C: Cgf> Marginal<C> {
    pub fn new(inner: C, index: usize) -> Self {
        Self { inner, index }
    }

    fn embed(&self, u: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.inner.dim()];
        full[self.index] = u[0];
        full
    }
}

impl<C: Cgf> Cgf for Marginal<C> {
    fn dim(&self) -> usize {
        1
    }

    fn value(&self, u: &[f64]) -> Result<f64> {
        self.inner.value(&self.embed(u))
    }

    fn gradient(&self, u: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![self.inner.gradient(&self.embed(u))?[self.index]])
    }
}

/// One-dimensional CGF of the pooled demand `sum_i X_i`.
pub struct Pooled<C> {
    inner: C,
}

impl<C: Cgf> Pooled<C> {
    pub fn new(inner: C) -> Self {
        Self { inner }
    }
}

impl<C: Cgf> Cgf for Pooled<C> {
    fn dim(&self) -> usize {
        1
    }

    fn value(&self, u: &[f64]) -> Result<f64> {
        self.inner.value(&vec![u[0]; self.inner.dim()])
    }

    fn gradient(&self, u: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![self.inner.gradient(&vec![u[0]; self.inner.dim()])?.iter().sum()])
    }
}

/// Chernoff upper bound on a stockout probability, with the optimized rates
/// behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct ChernoffBound {
    /// Upper bound, clamped to at most 1.
    pub probability: f64,
    /// One rate per term (two for [`StockoutPattern::UnionOfTwo`]).
    pub rates: Vec<RateResult>,
}

/// Chernoff bound `exp(-L R)` (`= exp(-L N R_per_degree)`) for the queried
/// stockout pattern, each term optimized by [`rate_numeric`].
///
/// The union of two events is bounded by
/// `P(X1 >= L e1) + P(X1 < L e1, X2 >= L e2)`, optimizing each term over its
/// own sign cone.
pub fn chernoff_bound(cgf: &impl Cgf, query: &StockoutQuery, cfg: &SolverConfig) -> Result<ChernoffBound> {
    query.pattern.validate(cgf.dim(), query.margin.len())?;
    let lead = query.lead;
    let eps = &query.margin;
    let rates = match &query.pattern {
        StockoutPattern::AllExceed => vec![rate_numeric(cgf, eps, cfg)?],
        StockoutPattern::SignedOrthant(sides) => {
            let flipped: Vec<f64> = eps.iter().zip(sides).map(|(e, s)| e * s.sign()).collect();
            vec![rate_numeric(&Signed::new(cgf, sides), &flipped, cfg)?]
        }
        StockoutPattern::UnionOfTwo => {
            let first = rate_numeric(&Marginal::new(cgf, 0), &eps[..1], cfg)?;
            let sides = [Side::Below, Side::Above];
            let second = rate_numeric(&Signed::new(cgf, &sides), &[-eps[0], eps[1]], cfg)?;
            vec![first, second]
        }
        StockoutPattern::FungibleSum => vec![rate_numeric(&Pooled::new(cgf), eps, cfg)?],
    };
    let probability = rates.iter().map(|r| r.bound(lead)).sum::<f64>().min(1.0);
    Ok(ChernoffBound { probability, rates })
}

//! Safety-stock policies.
//!
//! * previous: independence-based `sqrt(L sigma^2) H^{-1}(.)`;
//! * proposed: Chernoff-certified, with several ways of splitting `delta`
//!   across two commodities;
//! * rigorous: exact inversion of the joint stockout probability.
//!
//! Quantities are safety stock over the lead time (`L eps`); the order point
//! is `L mu + SS`.

use rayon::prelude::*;

use crate::demand::{GaussianModel, LeadTime};
use crate::error::{check_probability, Error, Result};
use crate::oracle::{invert_joint_tail, joint_stockout_probability, normal_tail, normal_tail_inverse, RigorousStock};
use crate::rate::rate_gaussian_closed;

/// `L mu_i + SS_i` for each commodity.
pub fn order_point(model: &GaussianModel, lead: LeadTime, stock: &[f64]) -> Result<Vec<f64>> {
    model.require_dim(stock.len())?;
    Ok(model
        .mean()
        .iter()
        .zip(stock)
        .map(|(mu, ss)| lead.as_f64() * mu + ss)
        .collect())
}

/// `n` log-spaced allowable stockout rates in `[lo, hi]`.
pub fn delta_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    check_probability(lo)?;
    check_probability(hi)?;
    if lo > hi || n == 0 {
        return Err(Error::InvalidParameter(format!(
            "bad grid [{lo}, {hi}] with {n} points"
        )));
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..n)
        .map(|i| {
            if i == 0 {
                lo
            } else if i == n - 1 {
                hi
            } else {
                (a + (b - a) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect())
}

fn equal_variances(model: &GaussianModel) -> Result<f64> {
    let (vx, vy) = (model.sigma_x2(), model.sigma_y2());
    if (vx - vy).abs() > 1e-12 * vx.max(vy) {
        return Err(Error::InvalidParameter(format!(
            "symmetric policy needs equal variances, got {vx} and {vy}"
        )));
    }
    Ok(vx)
}

/// Previous policy: each of the `N` commodities gets `sqrt(L sigma_i^2) H^{-1}(delta^{1/N})`
/// (so `H^{-1}(sqrt(delta))` for a pair). Correlation is ignored.
///
/// Negative once `delta^{1/N} > 1/2`: the order point then sits below mean
/// demand. The value is returned unclamped.
pub fn ss_previous(model: &GaussianModel, lead: LeadTime, delta: f64) -> Result<Vec<f64>> {
    check_probability(delta)?;
    let n = model.dim();
    let k = normal_tail_inverse(delta.powf(1.0 / n as f64))?;
    Ok((0..n).map(|i| (lead.as_f64() * model.variance(i)).sqrt() * k).collect())
}

/// How the joint budget `delta` is shared between two commodities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Allocation {
    /// Equal variances and equal margins:
    /// `SS = sqrt(L sigma^2 (1 + rho) log(1/delta))`, with
    /// `delta_X = delta^{(1+rho)/2}`, `delta_Y = delta^{(1-rho)/2}`.
    Symmetric,
    /// Caller-chosen split with `delta_X delta_Y = delta`, applied through the
    /// sequential formulas (see [`Allocation::Sequential`]).
    Explicit { delta_x: f64, delta_y: f64 },
    /// The split `delta^{(1+rho)/2}`, `delta^{(1-rho)/2}` fed through
    /// `L eX = sqrt(2 L sX^2 log(1/dX))` and
    /// `L eY = rho (sY/sX) L eX + sqrt(2 L sY^2 (1 - rho^2) log(1/dY))`.
    Sequential,
    /// One common safety stock for every commodity, solved so that the
    /// all-exceed Chernoff bound equals `delta`. Works for any `N`.
    EqualMargin,
}

/// Proposed (Chernoff-certified) safety stock.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposedStock {
    /// `L eps_i` per commodity.
    pub safety_stock: Vec<f64>,
    /// `(delta_X, delta_Y)` when a two-commodity split was used.
    pub split: Option<(f64, f64)>,
    /// All-exceed Chernoff bound at `safety_stock`, from the exact
    /// constrained rate. At most `delta` up to rounding whenever the split's
    /// unconstrained optimum is feasible.
    pub certified: f64,
}

fn certify(model: &GaussianModel, lead: LeadTime, stock: &[f64]) -> Result<f64> {
    let eps: Vec<f64> = stock.iter().map(|s| s / lead.as_f64()).collect();
    Ok(rate_gaussian_closed(model, &eps)?.bound(lead))
}

fn sequential_stock(model: &GaussianModel, lead: LeadTime, dx: f64, dy: f64) -> [f64; 2] {
    let l = lead.as_f64();
    let (vx, vy, rho) = (model.sigma_x2(), model.sigma_y2(), model.rho());
    let log_inv = |d: f64| (-d.ln()).max(0.0);
    let ss_x = (2.0 * l * vx * log_inv(dx)).sqrt();
    let offset = if vx > 0.0 { rho * (vy / vx).sqrt() * ss_x } else { 0.0 };
    let ss_y = offset + (2.0 * l * vy * (1.0 - rho * rho).max(0.0) * log_inv(dy)).sqrt();
    // raising a margin only lowers the bound
    [ss_x, ss_y.max(0.0)]
}

/// Proposed policy for Gaussian demand.
pub fn ss_proposed(model: &GaussianModel, lead: LeadTime, delta: f64, allocation: Allocation) -> Result<ProposedStock> {
    check_probability(delta)?;
    let l = lead.as_f64();
    if model.dim() == 1 {
        let ss = (-2.0 * l * model.variance(0) * delta.ln()).sqrt();
        return Ok(ProposedStock {
            safety_stock: vec![ss],
            split: None,
            certified: certify(model, lead, &[ss])?,
        });
    }
    if allocation == Allocation::EqualMargin {
        return equal_margin(model, lead, delta);
    }
    model.require_dim(2)?;
    let rho = model.rho();
    let (stock, split) = match allocation {
        Allocation::Symmetric => {
            let var = equal_variances(model)?;
            let ss = (l * var * (1.0 + rho) * (-delta.ln())).sqrt();
            let split = (delta.powf((1.0 + rho) / 2.0), delta.powf((1.0 - rho) / 2.0));
            (vec![ss, ss], split)
        }
        Allocation::Explicit { delta_x, delta_y } => {
            for d in [delta_x, delta_y] {
                if !(d > 0.0 && d <= 1.0) {
                    return Err(Error::InvalidParameter(format!("split component {d} outside (0, 1]")));
                }
            }
            if (delta_x * delta_y - delta).abs() > 1e-12 {
                return Err(Error::InvalidParameter(format!(
                    "split {delta_x} * {delta_y} does not multiply to {delta}"
                )));
            }
            (
                sequential_stock(model, lead, delta_x, delta_y).to_vec(),
                (delta_x, delta_y),
            )
        }
        Allocation::Sequential => {
            let (dx, dy) = (delta.powf((1.0 + rho) / 2.0), delta.powf((1.0 - rho) / 2.0));
            (sequential_stock(model, lead, dx, dy).to_vec(), (dx, dy))
        }
        Allocation::EqualMargin => unreachable!(),
    };
    let certified = certify(model, lead, &stock)?;
    Ok(ProposedStock {
        safety_stock: stock,
        split: Some(split),
        certified,
    })
}

fn equal_margin(model: &GaussianModel, lead: LeadTime, delta: f64) -> Result<ProposedStock> {
    let n = model.dim();
    let bound = |ss: f64| certify(model, lead, &vec![ss; n]);
    let scale = (lead.as_f64() * model.covariance().diagonal().max())
        .sqrt()
        .max(f64::MIN_POSITIVE);
    let (mut lo, mut hi) = (0.0, scale);
    while bound(hi)? > delta {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::UnreachableRate { target: -delta.ln() });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if bound(mid)? > delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(ProposedStock {
        safety_stock: vec![hi; n],
        split: None,
        certified: bound(hi)?,
    })
}

/// Safety stock for two fungible commodities, certifying
/// `P(L eps <= sum_t (X_t + Y_t)) <= delta`:
/// `sqrt(-2 L (sX^2 + sY^2 + 2 rho sX sY) log delta)`.
pub fn ss_fungible(model: &GaussianModel, lead: LeadTime, delta: f64) -> Result<f64> {
    check_probability(delta)?;
    model.require_dim(2)?;
    let cov = model.covariance();
    let pooled = (cov[(0, 0)] + cov[(1, 1)] + 2.0 * cov[(0, 1)]).max(0.0);
    Ok((-2.0 * lead.as_f64() * pooled * delta.ln()).sqrt())
}

/// Rigorous equal-margin safety stock for one or two commodities.
///
/// Larger `N` needs simulation: see
/// [`crate::oracle::invert_joint_tail_monte_carlo`].
pub fn ss_rigorous(model: &GaussianModel, lead: LeadTime, delta: f64) -> Result<RigorousStock> {
    check_probability(delta)?;
    match model.dim() {
        1 => {
            if delta >= 0.5 {
                return Ok(RigorousStock {
                    safety_stock: 0.0,
                    probability: 0.5,
                    saturated: true,
                });
            }
            let ss = (lead.as_f64() * model.variance(0)).sqrt() * normal_tail_inverse(delta)?;
            Ok(RigorousStock {
                safety_stock: ss,
                probability: normal_tail(normal_tail_inverse(delta)?),
                saturated: false,
            })
        }
        2 => invert_joint_tail(model, delta, lead),
        n => Err(Error::Unsupported(format!(
            "quadrature oracle covers N <= 2 (got {n}); use the Monte Carlo inversion"
        ))),
    }
}

/// The three policies at one `delta`, each with its exact stockout probability.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub delta: f64,
    pub lead: LeadTime,
    /// Per-commodity safety stock (equal for every commodity here).
    pub ss_pre: f64,
    pub ss_pro: f64,
    pub ss_rig: f64,
    /// Exact all-exceed stockout probability at each policy.
    pub p_pre: f64,
    pub p_pro: f64,
    pub p_rig: f64,
    /// Chernoff bound certified by `ss_pro`.
    pub certified_pro: f64,
    pub split: Option<(f64, f64)>,
    /// `ss_rig` was clamped to 0 because `delta >= P(0)`.
    pub rig_saturated: bool,
}

impl PolicyOutput {
    /// `SS_pro / SS_rig`, undefined when `SS_rig = 0`.
    pub fn ratio_pro(&self) -> Option<f64> {
        (self.ss_rig > 0.0).then(|| self.ss_pro / self.ss_rig)
    }

    pub fn ratio_pre(&self) -> Option<f64> {
        (self.ss_rig > 0.0).then(|| self.ss_pre / self.ss_rig)
    }

    /// `P(SS_pro) / delta`.
    pub fn stockout_ratio_pro(&self) -> f64 {
        self.p_pro / self.delta
    }

    pub fn stockout_ratio_pre(&self) -> f64 {
        self.p_pre / self.delta
    }

    pub fn stockout_ratio_rig(&self) -> f64 {
        self.p_rig / self.delta
    }
}

fn stockout_probability(model: &GaussianModel, lead: LeadTime, stock: f64) -> Result<f64> {
    match model.dim() {
        1 => Ok(normal_tail(stock / (lead.as_f64() * model.variance(0)).sqrt())),
        _ => joint_stockout_probability(model, stock, lead),
    }
}

/// All three policies for a single commodity or a symmetric pair.
pub fn evaluate_policies(model: &GaussianModel, lead: LeadTime, delta: f64) -> Result<PolicyOutput> {
    check_probability(delta)?;
    match model.dim() {
        1 => {}
        2 => {
            equal_variances(model)?;
        }
        n => return Err(Error::Unsupported(format!("policy comparison covers N <= 2, got {n}"))),
    }
    let pre = ss_previous(model, lead, delta)?[0];
    let pro = ss_proposed(model, lead, delta, Allocation::Symmetric)?;
    let rig = ss_rigorous(model, lead, delta)?;
    let ss_pro = pro.safety_stock[0];
    Ok(PolicyOutput {
        delta,
        lead,
        ss_pre: pre,
        ss_pro,
        ss_rig: rig.safety_stock,
        p_pre: stockout_probability(model, lead, pre)?,
        p_pro: stockout_probability(model, lead, ss_pro)?,
        p_rig: stockout_probability(model, lead, rig.safety_stock)?,
        certified_pro: pro.certified,
        split: pro.split,
        rig_saturated: rig.saturated,
    })
}

/// One [`PolicyOutput`] per grid point, in grid order.
pub fn compare_policies(model: &GaussianModel, lead: LeadTime, grid: &[f64]) -> Result<Vec<PolicyOutput>> {
    grid.par_iter().map(|&d| evaluate_policies(model, lead, d)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lead(l: u32) -> LeadTime {
        LeadTime::new(l).unwrap()
    }

    #[test]
    fn previous_policy_values() {
        let one = GaussianModel::univariate(1.0).unwrap();
        assert!(ss_previous(&one, lead(10), 0.5).unwrap()[0].abs() < 1e-14);
        let k = normal_tail_inverse(0.05).unwrap();
        let ss = ss_previous(&one, lead(10), 0.05).unwrap()[0];
        assert!((ss - 10f64.sqrt() * k).abs() < 1e-12);
        assert!((ss - 5.2015).abs() < 1e-4);
        let two = GaussianModel::bivariate(1.0, 1.0, 0.9).unwrap();
        let ss2 = ss_previous(&two, lead(10), 0.0025).unwrap();
        assert!((ss2[0] - ss).abs() < 1e-9 && (ss2[1] - ss).abs() < 1e-9);
    }

    #[test]
    fn proposed_symmetric_values() {
        let ind = GaussianModel::bivariate(1.0, 1.0, 0.0).unwrap();
        let p = ss_proposed(&ind, lead(10), (-1.0f64).exp(), Allocation::Symmetric).unwrap();
        assert!((p.safety_stock[0] - 10f64.sqrt()).abs() < 1e-12);
        assert!((p.certified - (-1.0f64).exp()).abs() < 1e-12);

        let cor = GaussianModel::bivariate(1.0, 1.0, 0.9).unwrap();
        let p = ss_proposed(&cor, lead(10), 0.05, Allocation::Symmetric).unwrap();
        let expected = (10.0 * 1.9 * 20f64.ln()).sqrt();
        assert!((p.safety_stock[0] - expected).abs() < 1e-12);
        assert!((p.safety_stock[0] - 7.5445).abs() < 1e-4);
        assert!((p.certified - 0.05).abs() < 1e-12);
        let (dx, dy) = p.split.unwrap();
        assert!((dx * dy - 0.05).abs() < 1e-12);

        let perfect = GaussianModel::bivariate(1.0, 1.0, 1.0).unwrap();
        let p = ss_proposed(&perfect, lead(10), 0.05, Allocation::Symmetric).unwrap();
        assert!((p.safety_stock[0] - (2.0 * 10.0 * 20f64.ln()).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn sequential_split_reproduces_symmetric_closed_form() {
        for rho in [-0.9, -0.5, 0.0, 0.3, 0.9, 0.99] {
            let m = GaussianModel::bivariate(1.7, 1.7, rho).unwrap();
            for d in [1e-4, 0.01, 0.2] {
                let sym = ss_proposed(&m, lead(6), d, Allocation::Symmetric).unwrap();
                let seq = ss_proposed(&m, lead(6), d, Allocation::Sequential).unwrap();
                let eq = ss_proposed(&m, lead(6), d, Allocation::EqualMargin).unwrap();
                for i in 0..2 {
                    assert!((sym.safety_stock[i] - seq.safety_stock[i]).abs() < 1e-9, "{rho} {d}");
                    assert!((sym.safety_stock[i] - eq.safety_stock[i]).abs() < 1e-8, "{rho} {d}");
                }
                let (dx, dy) = seq.split.unwrap();
                assert!((dx * dy - d).abs() < 1e-12);
                assert!(seq.certified <= d * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn independent_split_matches_at_zero_correlation() {
        let m = GaussianModel::bivariate(0.8, 2.0, 0.0).unwrap();
        let d: f64 = 0.01;
        let (dx, dy) = (d.sqrt(), d.sqrt());
        let p = ss_proposed(
            &m,
            lead(5),
            d,
            Allocation::Explicit {
                delta_x: dx,
                delta_y: dy,
            },
        )
        .unwrap();
        // independent split: L e_i = sqrt(2 L s_i^2 log(1/d_i))
        let ind = [
            (2.0 * 5.0 * 0.64 * (1.0 / dx).ln()).sqrt(),
            (2.0 * 5.0 * 4.0 * (1.0 / dy).ln()).sqrt(),
        ];
        assert!((p.safety_stock[0] - ind[0]).abs() < 1e-10);
        assert!((p.safety_stock[1] - ind[1]).abs() < 1e-10);
        assert!((p.certified - d).abs() < 1e-12);
    }

    #[test]
    fn explicit_split_validation() {
        let m = GaussianModel::bivariate(1.0, 1.0, 0.5).unwrap();
        let bad = ss_proposed(
            &m,
            lead(5),
            0.01,
            Allocation::Explicit {
                delta_x: 0.2,
                delta_y: 0.2,
            },
        );
        assert!(bad.is_err());
        let bad = ss_proposed(
            &m,
            lead(5),
            0.01,
            Allocation::Explicit {
                delta_x: 2.0,
                delta_y: 0.005,
            },
        );
        assert!(bad.is_err());
        let ok = ss_proposed(
            &m,
            lead(5),
            0.01,
            Allocation::Explicit {
                delta_x: 0.01,
                delta_y: 1.0,
            },
        )
        .unwrap();
        assert!(ok.safety_stock.iter().all(|&s| s >= 0.0));
        let uneq = GaussianModel::bivariate(1.0, 2.0, 0.5).unwrap();
        assert!(ss_proposed(&uneq, lead(5), 0.01, Allocation::Symmetric).is_err());
    }

    #[test]
    fn fungible_values() {
        let hedge = GaussianModel::bivariate(1.0, 1.0, -1.0).unwrap();
        assert_eq!(ss_fungible(&hedge, lead(10), 0.05).unwrap(), 0.0);
        let ind = GaussianModel::bivariate(1.0, 1.0, 0.0).unwrap();
        let ss = ss_fungible(&ind, lead(10), (-1.0f64).exp()).unwrap();
        assert!((ss - 40f64.sqrt()).abs() < 1e-12);
        let mut prev = -1.0;
        for rho in [-0.9, -0.6, -0.3, 0.0, 0.3, 0.6, 0.9] {
            let m = GaussianModel::bivariate(1.0, 1.0, rho).unwrap();
            let ss = ss_fungible(&m, lead(10), 0.05).unwrap();
            assert!(ss >= prev);
            prev = ss;
        }
    }

    #[test]
    fn rigorous_values() {
        let ind = GaussianModel::bivariate(1.0, 1.0, 0.0).unwrap();
        assert_eq!(ss_rigorous(&ind, lead(3), 0.25).unwrap().safety_stock, 0.0);
        let m = GaussianModel::bivariate(1.0, 1.0, 0.9).unwrap();
        let a = ss_rigorous(&m, lead(10), 0.01).unwrap().safety_stock;
        let b = ss_rigorous(&m, lead(10), 0.05).unwrap().safety_stock;
        assert!(a > b && b > 0.0);
        let one = GaussianModel::univariate(2.0).unwrap();
        let r = ss_rigorous(&one, lead(4), 0.05).unwrap();
        assert!((r.safety_stock - ss_previous(&one, lead(4), 0.05).unwrap()[0]).abs() < 1e-12);
        let three = GaussianModel::from_rows(
            &[0.0; 3],
            &[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
        )
        .unwrap();
        assert!(matches!(ss_rigorous(&three, lead(1), 0.1), Err(Error::Unsupported(_))));
    }

    #[test]
    fn order_point_adds_mean_demand() {
        let m = GaussianModel::bivariate(1.0, 1.0, 0.2)
            .unwrap()
            .with_mean(nalgebra::DVector::from_vec(vec![5.0, 8.0]))
            .unwrap();
        assert_eq!(order_point(&m, lead(10), &[1.0, 2.0]).unwrap(), vec![51.0, 82.0]);
    }

    #[test]
    fn grid_is_log_spaced() {
        let g = delta_grid(1e-3, 0.5, 40).unwrap();
        assert_eq!(g.len(), 40);
        assert_eq!(g[0], 1e-3);
        assert_eq!(g[39], 0.5);
        let r = g[1] / g[0];
        assert!(g.windows(2).all(|w| (w[1] / w[0] - r).abs() < 1e-12));
        assert!(delta_grid(0.5, 0.1, 3).is_err());
    }

    #[test]
    fn comparison_rows_certify() {
        let m = GaussianModel::bivariate(1.0, 1.0, 0.9).unwrap();
        let rows = compare_policies(&m, lead(10), &[0.01, 0.05]).unwrap();
        for r in &rows {
            assert!(r.p_pro <= r.delta);
            assert!(r.p_pre > r.delta);
            assert!((r.p_rig - r.delta).abs() < 1e-9);
            assert!(r.ss_pro >= r.ss_rig);
            let ratio = r.ratio_pro().unwrap();
            assert!((1.2..=1.9).contains(&ratio), "{ratio}");
        }
        assert_eq!(rows[0].delta, 0.01);
    }
}

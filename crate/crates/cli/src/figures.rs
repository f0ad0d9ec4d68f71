//! Curve data behind the comparison figures.

use stockbound_core::cgf::cgf_empirical;
use stockbound_core::demand::{sample_correlated, EmpiricalDemand, GaussianModel};
use stockbound_core::policy::{compare_policies, PolicyOutput};
use stockbound_core::LeadTime;

/// Sample sizes used for the estimation-error curves.
pub const ESTIMATION_SIZES: [usize; 4] = [100, 1_000, 10_000, 100_000];

/// Policy rows over `grid` for the comparison figures.
pub fn policy_curves(model: &GaussianModel, lead: LeadTime, grid: &[f64]) -> anyhow::Result<Vec<PolicyOutput>> {
    Ok(compare_policies(model, lead, grid)?)
}

/// `|phi_hat(u) - u^2/2|` for standard-normal samples of each size in
/// `sizes`, one row per `u`, columns in `sizes` order. Smaller samples are
/// prefixes of larger ones (replicate `r` always comes from RNG stream `r`).
pub fn estimation_errors(sizes: &[usize], us: &[f64], seed: u64) -> anyhow::Result<Vec<Vec<f64>>> {
    let largest = sizes.iter().copied().max().unwrap_or(0);
    let model = GaussianModel::univariate(1.0)?;
    let draws = sample_correlated(&model, LeadTime::new(1)?, largest, seed)?;
    let samples = draws.as_slice();
    let mut columns = Vec::with_capacity(sizes.len());
    for &m in sizes {
        let data = EmpiricalDemand::new(samples[..m].iter().map(|&x| vec![x]).collect())?;
        let col = us
            .iter()
            .map(|&u| Ok((cgf_empirical(&data, u)? - 0.5 * u * u).abs()))
            .collect::<anyhow::Result<Vec<f64>>>()?;
        columns.push(col);
    }
    Ok((0..us.len()).map(|i| columns.iter().map(|c| c[i]).collect()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimation_error_vanishes_at_zero() {
        let rows = estimation_errors(&[10, 100], &[0.0, 0.5], 3).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0], vec![0.0, 0.0]);
        assert!(rows[1].iter().all(|e| e.is_finite() && *e > 0.0));
    }

    #[test]
    fn estimation_error_is_seeded() {
        let a = estimation_errors(&[50], &[1.0], 7).unwrap();
        let b = estimation_errors(&[50], &[1.0], 7).unwrap();
        let c = estimation_errors(&[50], &[1.0], 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}

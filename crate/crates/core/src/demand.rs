//! Demand distributions, correlated sampling and demand-file ingestion.
//!
//! Every formula downstream works on mean-centered demand `X_t = D_t - mu`.
//! Raw demand only appears at ingestion ([`load_demand_csv`]) and in the
//! samples returned by [`sample_correlated`].

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance (against the trace) used for symmetry and PSD checks.
pub const PSD_TOLERANCE: f64 = 1e-10;

/// The reproducible generator used everywhere: ChaCha8 seeded from a `u64`,
/// with an independent stream per partition of work.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Lead time in periods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct LeadTime(u32);

impl LeadTime {
    pub fn new(periods: u32) -> Result<Self> {
        if periods == 0 {
            return Err(Error::InvalidParameter("lead time must be at least 1 period".into()));
        }
        Ok(Self(periods))
    }

    pub fn periods(self) -> u32 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.0)
    }
}

impl TryFrom<u32> for LeadTime {
    type Error = Error;

    fn try_from(value: u32) -> Result<Self> {
        Self::new(value)
    }
}

impl From<LeadTime> for u32 {
    fn from(value: LeadTime) -> Self {
        value.0
    }
}

/// Multivariate Gaussian per-period demand `N(mu, Sigma)`.
///
/// The sampling factor `F` (with `F F^T = Sigma`) is computed once at
/// construction: Cholesky when `Sigma` is positive definite, otherwise the
/// eigendecomposition `V diag(sqrt(max(lambda, 0)))`, which covers perfectly
/// correlated commodities.
#[derive(Debug, Clone)]
pub struct GaussianModel {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    factor: DMatrix<f64>,
    rho: Option<f64>,
}

impl GaussianModel {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if n == 0 {
            return Err(Error::InvalidModel("dimension must be at least 1".into()));
        }
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: cov.nrows().max(cov.ncols()),
            });
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("non-finite parameter".into()));
        }
        let trace = cov.trace();
        let scale = trace.abs().max(f64::MIN_POSITIVE);
        for i in 0..n {
            if cov[(i, i)] < 0.0 {
                return Err(Error::InvalidModel(format!("negative variance on diagonal entry {i}")));
            }
            for j in 0..i {
                if (cov[(i, j)] - cov[(j, i)]).abs() > PSD_TOLERANCE * scale {
                    return Err(Error::InvalidModel(format!("covariance not symmetric at ({i}, {j})")));
                }
                let bound = (cov[(i, i)] * cov[(j, j)]).sqrt();
                if cov[(i, j)].abs() > bound * (1.0 + 1e-12) + PSD_TOLERANCE * scale {
                    return Err(Error::InvalidModel(format!("|correlation| > 1 at ({i}, {j})")));
                }
            }
        }
        let cov = (&cov + cov.transpose()) * 0.5;
        let factor = sampling_factor(&cov)?;
        Ok(Self {
            mean,
            cov,
            factor,
            rho: None,
        })
    }

    /// Convenience constructor from nested rows.
    pub fn from_rows(mean: &[f64], cov: &[Vec<f64>]) -> Result<Self> {
        let n = mean.len();
        if cov.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: cov.len(),
            });
        }
        if let Some(row) = cov.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: row.len(),
            });
        }
        let m = DMatrix::from_fn(n, n, |i, j| cov[i][j]);
        Self::new(DVector::from_column_slice(mean), m)
    }

    /// Zero-mean single commodity with variance `variance`.
    pub fn univariate(variance: f64) -> Result<Self> {
        Self::new(DVector::zeros(1), DMatrix::from_element(1, 1, variance))
    }

    /// Zero-mean pair with standard deviations `sigma_x`, `sigma_y` and
    /// correlation `rho`; the off-diagonal is exactly `rho * sigma_x * sigma_y`.
    pub fn bivariate(sigma_x: f64, sigma_y: f64, rho: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&rho) {
            return Err(Error::InvalidModel(format!("correlation {rho} outside [-1, 1]")));
        }
        if !(sigma_x >= 0.0 && sigma_y >= 0.0) {
            return Err(Error::InvalidModel("standard deviations must be nonnegative".into()));
        }
        let off = rho * sigma_x * sigma_y;
        let cov = DMatrix::from_row_slice(2, 2, &[sigma_x * sigma_x, off, off, sigma_y * sigma_y]);
        let mut model = Self::new(DVector::zeros(2), cov)?;
        model.rho = Some(rho);
        Ok(model)
    }

    pub fn with_mean(mut self, mean: DVector<f64>) -> Result<Self> {
        if mean.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: mean.len(),
            });
        }
        self.mean = mean;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Sampling factor `F` with `F F^T = Sigma`.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn variance(&self, i: usize) -> f64 {
        self.cov[(i, i)]
    }

    /// Correlation between commodities `i` and `j` (0 when either variance is 0).
    pub fn correlation(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 1.0;
        }
        if self.dim() == 2 {
            if let Some(rho) = self.rho {
                return rho;
            }
        }
        let denom = (self.cov[(i, i)] * self.cov[(j, j)]).sqrt();
        if denom > 0.0 {
            (self.cov[(i, j)] / denom).clamp(-1.0, 1.0)
        } else {
            0.0
        }
    }

    pub fn sigma_x2(&self) -> f64 {
        self.variance(0)
    }

    pub fn sigma_y2(&self) -> f64 {
        self.variance(1)
    }

    /// Correlation of a two-commodity model.
    pub fn rho(&self) -> f64 {
        self.correlation(0, 1)
    }

    pub(crate) fn require_dim(&self, n: usize) -> Result<()> {
        if self.dim() == n {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: n,
                found: self.dim(),
            })
        }
    }

    /// Draws the centered lead-time total `sum_t X_t` into `out`, using `z`
    /// as scratch space for the standard normals.
    pub fn draw_lead_time_total<R: rand::Rng + ?Sized>(
        &self,
        rng: &mut R,
        lead: LeadTime,
        z: &mut [f64],
        out: &mut [f64],
    ) {
        let n = self.dim();
        out.iter_mut().for_each(|v| *v = 0.0);
        for _ in 0..lead.periods() {
            for zi in z.iter_mut() {
                *zi = StandardNormal.sample(rng);
            }
            // eigen factors are not lower triangular, so use the full row
            for (i, total) in out.iter_mut().enumerate().take(n) {
                *total += z
                    .iter()
                    .enumerate()
                    .map(|(k, zk)| self.factor[(i, k)] * zk)
                    .sum::<f64>();
            }
        }
    }
}

fn sampling_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    let trace = cov.trace();
    if trace == 0.0 {
        return Ok(DMatrix::zeros(n, n));
    }
    if let Some(chol) = cov.clone().cholesky() {
        return Ok(chol.l());
    }
    let eig = SymmetricEigen::new(cov.clone());
    let min = eig.eigenvalues.min();
    if min < -PSD_TOLERANCE * trace {
        return Err(Error::InvalidModel(format!(
            "covariance is not positive semidefinite (eigenvalue {min:e})"
        )));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots))
}

/// Weibull per-period demand with shape `alpha` and scale `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeibullModel {
    shape: f64,
    scale: f64,
}

impl WeibullModel {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        if !(shape > 0.0 && shape.is_finite() && scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "Weibull shape and scale must be positive (got {shape}, {scale})"
            )));
        }
        Ok(Self { shape, scale })
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// `E[X] = beta * Gamma(1 + 1/alpha)`.
    pub fn mean(&self) -> f64 {
        self.scale * libm::tgamma(1.0 + 1.0 / self.shape)
    }

    /// Inverse-CDF draw.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.scale * (-(1.0 - u).ln()).powf(1.0 / self.shape)
    }
}

/// `M` replicate demand sequences of length `L`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDemand {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl EmpiricalDemand {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        if rows.is_empty() || cols == 0 {
            return Err(Error::InvalidParameter(
                "empirical demand needs at least one non-empty row".into(),
            ));
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::Parse {
                    row: r as u64 + 1,
                    column: row.len().min(cols) + 1,
                    message: format!("expected {cols} columns, found {}", row.len()),
                });
            }
            if let Some(c) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    row: r as u64 + 1,
                    column: c + 1,
                    message: "non-finite value".into(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Number of replicate sequences `M`.
    pub fn replicates(&self) -> usize {
        self.rows
    }

    /// Sequence length `L`.
    pub fn periods(&self) -> usize {
        self.cols
    }

    pub fn row(&self, a: usize) -> &[f64] {
        &self.data[a * self.cols..(a + 1) * self.cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    /// Per-replicate totals `sum_t D_ta`.
    pub fn row_sums(&self) -> Vec<f64> {
        self.rows().map(|r| r.iter().sum()).collect()
    }
}

/// Reads one replicate sequence per row, periods as columns.
///
/// Row numbers in errors are 1-based file lines.
pub fn load_demand_csv(path: impl AsRef<Path>, has_header: bool) -> Result<EmpiricalDemand> {
    let path = path.as_ref();
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    parse_demand_csv(&text, has_header).map_err(|e| match e {
        Error::EmptyData(_) => Error::EmptyData(path.to_path_buf()),
        other => other,
    })
}

pub fn parse_demand_csv(text: &str, has_header: bool) -> Result<EmpiricalDemand> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    let mut width = None;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            row: e.position().map(|p| p.line()).unwrap_or(0),
            column: 0,
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(rows.len() as u64 + 1);
        if record.iter().all(str::is_empty) {
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::Parse {
                row: line,
                column: record.len().min(expected) + 1,
                message: format!("ragged row: expected {expected} columns, found {}", record.len()),
            });
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(c, cell)| match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Parse {
                    row: line,
                    column: c + 1,
                    message: format!("not a finite number: {cell:?}"),
                }),
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyData(PathBuf::new()));
    }
    EmpiricalDemand::new(rows)
}

/// Raw demand samples with shape `count x L x N`.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandTensor {
    count: usize,
    periods: usize,
    dim: usize,
    data: Vec<f64>,
}

impl DemandTensor {
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.count, self.periods, self.dim)
    }

    pub fn get(&self, replicate: usize, period: usize, commodity: usize) -> f64 {
        self.data[(replicate * self.periods + period) * self.dim + commodity]
    }

    /// Draw `(replicate, period)` as a slice over commodities.
    pub fn draw(&self, replicate: usize, period: usize) -> &[f64] {
        let start = (replicate * self.periods + period) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Draws `count` replicates of `L` i.i.d. periods of raw demand `N(mu, Sigma)`.
///
/// Replicate `r` uses stream `r` of the seeded generator, so any subset of
/// replicates can be regenerated independently.
pub fn sample_correlated(model: &GaussianModel, lead: LeadTime, count: usize, seed: u64) -> Result<DemandTensor> {
    if count == 0 {
        return Err(Error::InvalidParameter("sample count must be at least 1".into()));
    }
    let n = model.dim();
    let periods = lead.periods() as usize;
    let mut data = vec![0.0; count * periods * n];
    let mut z = vec![0.0; n];
    for (r, block) in data.chunks_exact_mut(periods * n).enumerate() {
        let mut rng = stream_rng(seed, r as u64);
        for draw in block.chunks_exact_mut(n) {
            for zi in z.iter_mut() {
                *zi = StandardNormal.sample(&mut rng);
            }
            for (i, out) in draw.iter_mut().enumerate() {
                let noise: f64 = (0..n).map(|k| model.factor[(i, k)] * z[k]).sum();
                *out = model.mean[i] + noise;
            }
        }
    }
    Ok(DemandTensor {
        count,
        periods,
        dim: n,
        data,
    })
}

/// Structured model description, as found in JSON run configs:
/// `{"type":"gaussian","mu":[0,0],"sigma":[[1,0.9],[0.9,1]]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ModelSpec {
    Gaussian {
        mu: Vec<f64>,
        sigma: Vec<Vec<f64>>,
    },
    Weibull {
        shape: f64,
        scale: f64,
    },
    Empirical {
        path: PathBuf,
        #[serde(default)]
        header: bool,
    },
}

/// A validated demand distribution.
#[derive(Debug, Clone)]
pub enum DemandModel {
    Gaussian(GaussianModel),
    Weibull(WeibullModel),
    Empirical(EmpiricalDemand),
}

impl ModelSpec {
    pub fn build(&self) -> Result<DemandModel> {
        Ok(match self {
            ModelSpec::Gaussian { mu, sigma } => DemandModel::Gaussian(GaussianModel::from_rows(mu, sigma)?),
            ModelSpec::Weibull { shape, scale } => DemandModel::Weibull(WeibullModel::new(*shape, *scale)?),
            ModelSpec::Empirical { path, header } => DemandModel::Empirical(load_demand_csv(path, *header)?),
        })
    }
}

//! Return panels, weighted moment estimation, eigen-diagnostics and condition numbers.

use std::cmp::Ordering;
use std::io::Read;

use nalgebra::{DMatrix, DVector};

use crate::error::{AllocError, Result};
use crate::linalg::{self, SVD_RANK_CUTOFF};

/// A `T × n` panel of per-period decimal returns with asset labels and ordered dates.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    returns: DMatrix<f64>,
    assets: Vec<String>,
    dates: Vec<String>,
}

/// Orders two date identifiers: numerically when both parse as numbers,
/// lexicographically otherwise (ISO-8601 dates sort correctly that way).
fn compare_dates(a: &str, b: &str) -> Ordering {
    match (a.trim().parse::<f64>(), b.trim().parse::<f64>()) {
        (Ok(x), Ok(y)) => x.total_cmp(&y),
        _ => a.cmp(b),
    }
}

impl ReturnPanel {
    /// Validates and builds a panel.
    ///
    /// Requires `T ≥ 2`, `n ≥ 1`, finite entries and strictly increasing dates.
    pub fn new(returns: DMatrix<f64>, assets: Vec<String>, dates: Vec<String>) -> Result<Self> {
        let (t, n) = returns.shape();
        if n == 0 {
            return Err(AllocError::DegeneratePanel("panel has no assets".into()));
        }
        if t < 2 {
            return Err(AllocError::DegeneratePanel(format!(
                "panel needs at least 2 observations, got {t}"
            )));
        }
        if assets.len() != n {
            return Err(AllocError::DimensionMismatch(format!(
                "{} asset labels for {n} columns",
                assets.len()
            )));
        }
        if dates.len() != t {
            return Err(AllocError::DimensionMismatch(format!(
                "{} dates for {t} rows",
                dates.len()
            )));
        }
        if let Some((idx, _)) = returns.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(AllocError::InvalidInput(format!(
                "non-finite return at row {}, column {}",
                idx % t,
                idx / t
            )));
        }
        for w in dates.windows(2) {
            if compare_dates(&w[0], &w[1]) != Ordering::Less {
                return Err(AllocError::InvalidInput(format!(
                    "dates must be strictly increasing ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        Ok(ReturnPanel { returns, assets, dates })
    }

    /// Builds a panel with synthetic dates `1..=T`.
    pub fn from_matrix(returns: DMatrix<f64>) -> Result<Self> {
        let assets = (1..=returns.ncols()).map(|i| format!("asset{i}")).collect();
        let dates = (1..=returns.nrows()).map(|t| t.to_string()).collect();
        ReturnPanel::new(returns, assets, dates)
    }

    /// Parses a CSV panel with header `date,<asset1>,...,<assetN>`.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| AllocError::InvalidInput(format!("cannot read CSV header: {e}")))?
            .clone();
        if header.len() < 2 || !header[0].eq_ignore_ascii_case("date") {
            return Err(AllocError::InvalidInput(
                "CSV header must be `date,<asset1>,...,<assetN>`".into(),
            ));
        }
        let assets: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let n = assets.len();
        let mut dates = Vec::new();
        let mut values = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| AllocError::InvalidInput(format!("CSV row {}: {e}", line + 2)))?;
            if record.len() != n + 1 {
                return Err(AllocError::InvalidInput(format!(
                    "CSV row {} has {} fields, expected {}",
                    line + 2,
                    record.len(),
                    n + 1
                )));
            }
            dates.push(record[0].to_string());
            for field in record.iter().skip(1) {
                let v: f64 = field.parse().map_err(|_| {
                    AllocError::InvalidInput(format!("CSV row {}: `{field}` is not a number", line + 2))
                })?;
                values.push(v);
            }
        }
        let t = dates.len();
        let returns = DMatrix::from_row_slice(t, n, &values);
        ReturnPanel::new(returns, assets, dates)
    }

    /// The `T × n` return matrix.
    pub fn returns(&self) -> &DMatrix<f64> {
        &self.returns
    }

    /// Asset labels.
    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    /// Date identifiers.
    pub fn dates(&self) -> &[String] {
        &self.dates
    }

    /// Number of observations `T`.
    pub fn periods(&self) -> usize {
        self.returns.nrows()
    }

    /// Number of assets `n`.
    pub fn n_assets(&self) -> usize {
        self.returns.ncols()
    }
}

/// Observation-weighting scheme for moment estimation.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightScheme {
    /// `w_t = 1/T`.
    Uniform,
    /// Exponentially weighted: `w_t ∝ decay^(T−t)`, so the latest observation weighs most.
    Ewma {
        /// Decay factor in `(0, 1)`.
        decay: f64,
    },
    /// User-supplied non-negative weights (normalized to sum to one).
    Explicit(Vec<f64>),
}

impl WeightScheme {
    /// Normalized observation weights for a panel of `t` periods.
    pub fn weights(&self, t: usize) -> Result<DVector<f64>> {
        let raw: Vec<f64> = match self {
            WeightScheme::Uniform => vec![1.0; t],
            WeightScheme::Ewma { decay } => {
                if !(*decay > 0.0 && *decay < 1.0) {
                    return Err(AllocError::InvalidInput(format!(
                        "EWMA decay must lie in (0,1), got {decay}"
                    )));
                }
                (1..=t).map(|k| decay.powi((t - k) as i32)).collect()
            }
            WeightScheme::Explicit(w) => {
                if w.len() != t {
                    return Err(AllocError::DimensionMismatch(format!(
                        "{} weights for {t} observations",
                        w.len()
                    )));
                }
                if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(AllocError::InvalidInput("weights must be finite and non-negative".into()));
                }
                w.clone()
            }
        };
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Err(AllocError::InvalidInput("weights sum to zero".into()));
        }
        Ok(DVector::from_iterator(t, raw.into_iter().map(|v| v / total)))
    }

    /// Compact label (`uniform`, `ewma:0.97`, `explicit`).
    pub fn label(&self) -> String {
        match self {
            WeightScheme::Uniform => "uniform".into(),
            WeightScheme::Ewma { decay } => format!("ewma:{decay}"),
            WeightScheme::Explicit(_) => "explicit".into(),
        }
    }
}

impl std::str::FromStr for WeightScheme {
    type Err = AllocError;

    /// Parses `uniform` or `ewma:<decay>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("uniform") {
            return Ok(WeightScheme::Uniform);
        }
        if let Some(rest) = s.strip_prefix("ewma:") {
            let decay: f64 = rest
                .trim()
                .parse()
                .map_err(|_| AllocError::InvalidInput(format!("invalid EWMA decay '{rest}'")))?;
            if !(decay > 0.0 && decay < 1.0) {
                return Err(AllocError::InvalidInput(format!("EWMA decay must lie in (0,1), got {decay}")));
            }
            return Ok(WeightScheme::Ewma { decay });
        }
        Err(AllocError::InvalidInput(format!("unknown weighting scheme '{s}' (expected uniform or ewma:<decay>)")))
    }
}

/// Expected returns and covariance estimated from a panel.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimates {
    /// Per-period expected returns.
    pub mu: DVector<f64>,
    /// Symmetric positive semi-definite covariance.
    pub sigma: DMatrix<f64>,
    /// Weighting scheme the estimates were produced with.
    pub scheme: WeightScheme,
}

/// Weighted covariance through the `Rᵀ(D_w − wwᵀ)R` form.
pub fn covariance_outer_form(returns: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let dw = DMatrix::from_diagonal(w);
    let kernel = dw - w * w.transpose();
    returns.transpose() * kernel * returns
}

/// Weighted covariance through the centered form `Rᵀ C_Tᵀ D_w C_T R` with `C_T = I − 1wᵀ`.
pub fn covariance_centered_form(returns: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let t = returns.nrows();
    let centering = DMatrix::identity(t, t) - DVector::from_element(t, 1.0) * w.transpose();
    let centered = centering * returns;
    centered.transpose() * DMatrix::from_diagonal(w) * centered
}

/// Clips eigenvalues within the PSD tolerance to zero, rejecting anything more negative.
pub fn enforce_psd(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = linalg::symmetrize(sigma);
    if sym.nrows() == 0 {
        return Ok(sym);
    }
    let (values, vectors) = linalg::sym_eigen_desc(&sym);
    let lmax = values[0].max(0.0);
    let lmin = values[values.len() - 1];
    if lmin >= 0.0 {
        return Ok(sym);
    }
    if lmin < -1e-10 * lmax || lmax == 0.0 && lmin < 0.0 {
        return Err(AllocError::NotPsd(lmin));
    }
    let clipped = values.map(|v| v.max(0.0));
    Ok(linalg::symmetrize(&(&vectors * DMatrix::from_diagonal(&clipped) * vectors.transpose())))
}

/// Weighted moment estimates `μ = Rᵀw` and `Σ = Rᵀ(D_w − wwᵀ)R`.
pub fn estimate_moments(panel: &ReturnPanel, scheme: &WeightScheme) -> Result<MomentEstimates> {
    let r = panel.returns();
    if r.nrows() < 2 {
        return Err(AllocError::DegeneratePanel("fewer than 2 observations".into()));
    }
    let w = scheme.weights(r.nrows())?;
    let mu = r.transpose() * &w;
    let sigma = enforce_psd(&covariance_outer_form(r, &w))?;
    Ok(MomentEstimates { mu, sigma, scheme: scheme.clone() })
}

/// Orthonormal eigenvectors (columns) and descending eigenvalues of a covariance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    /// Eigenvectors as columns; the first non-zero entry of each is positive.
    pub vectors: DMatrix<f64>,
    /// Eigenvalues in descending order.
    pub values: DVector<f64>,
}

impl EigenDecomposition {
    /// Share of the total variance carried by each eigenvalue (sums to one).
    pub fn variance_shares(&self) -> DVector<f64> {
        let total: f64 = self.values.iter().sum();
        self.values.map(|v| v / total)
    }

    /// Running sum of [`EigenDecomposition::variance_shares`].
    pub fn cumulative_shares(&self) -> DVector<f64> {
        let shares = self.variance_shares();
        let mut acc = 0.0;
        shares.map(|s| {
            acc += s;
            acc
        })
    }
}

/// Symmetric eigen-decomposition `Σ = VΛVᵀ` with descending eigenvalues.
pub fn eigen_decompose(sigma: &DMatrix<f64>) -> Result<EigenDecomposition> {
    linalg::ensure_symmetric(sigma, 1e-12)?;
    let (values, vectors) = linalg::sym_eigen_desc(sigma);
    Ok(EigenDecomposition { vectors, values })
}

/// Ratio of the largest to the smallest retained singular value.
///
/// Singular values below `1e-12 · s_max` are treated as zero (rank cutoff), so that
/// `κ(A) = κ(A†)` holds for rank-deficient matrices as well.
pub fn condition_number(matrix: &DMatrix<f64>) -> Result<f64> {
    let s = matrix.clone().singular_values();
    let smax = s.iter().copied().fold(0.0_f64, f64::max);
    if smax < 1e-300 {
        return Err(AllocError::SingularMatrix);
    }
    let smin = s
        .iter()
        .copied()
        .filter(|&v| v > SVD_RANK_CUTOFF * smax)
        .fold(f64::INFINITY, f64::min);
    if smin < 1e-300 {
        return Err(AllocError::SingularMatrix);
    }
    Ok(smax / smin)
}

//! Black–Litterman conditional moments and the conversion of manager grades into
//! expected returns.

use nalgebra::{DMatrix, DVector};

use crate::error::{AllocError, Result};
use crate::linalg::{self, SquareFactor};
use crate::mvo_core::implied_returns;

/// Linear views `P·R = Q + ε` with `ε ~ N(0, Σ_ε)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Views {
    /// Pick matrix (k × n).
    pub pick: DMatrix<f64>,
    /// View targets (k).
    pub target: DVector<f64>,
    /// Covariance of the view errors (k × k, symmetric positive definite).
    pub noise_cov: DMatrix<f64>,
}

impl Views {
    /// Validated constructor.
    pub fn new(pick: DMatrix<f64>, target: DVector<f64>, noise_cov: DMatrix<f64>) -> Result<Self> {
        let k = pick.nrows();
        if target.len() != k || noise_cov.shape() != (k, k) {
            return Err(AllocError::DimensionMismatch("pick matrix, targets and view covariance disagree".into()));
        }
        linalg::ensure_symmetric(&noise_cov, 1e-10)?;
        if noise_cov.clone().cholesky().is_none() {
            return Err(AllocError::NotPositiveDefinite);
        }
        Ok(Views { pick, target, noise_cov })
    }

    /// Absolute views on every asset, `Σ_ε = τΣ`.
    pub fn absolute(view_returns: DVector<f64>, sigma: &DMatrix<f64>, tau: f64) -> Result<Self> {
        let n = view_returns.len();
        Views::new(DMatrix::identity(n, n), view_returns, sigma * tau)
    }
}

/// Conditional (posterior) moments of the returns given the views.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    /// Conditional mean `μ̄`.
    pub mean: DVector<f64>,
    /// Conditional covariance `Σ̄`.
    pub cov: DMatrix<f64>,
}

/// Conditional moments `μ̄ = μ̃ + Σ_mPᵀ(PΣ_mPᵀ + Σ_ε)⁻¹(Q − Pμ̃)` and
/// `Σ̄ = Σ_m − Σ_mPᵀ(PΣ_mPᵀ + Σ_ε)⁻¹PΣ_m`.
pub fn bl_conditional(prior_mean: &DVector<f64>, prior_cov: &DMatrix<f64>, views: &Views) -> Result<Posterior> {
    let n = prior_mean.len();
    if prior_cov.shape() != (n, n) || views.pick.ncols() != n {
        return Err(AllocError::DimensionMismatch("prior moments and views disagree".into()));
    }
    let sp = prior_cov * views.pick.transpose();
    let m = &views.pick * &sp + &views.noise_cov;
    let factor = SquareFactor::new(&m).ok_or(AllocError::SingularViewCovariance)?;
    let gain_t = factor.solve_mat(&sp.transpose()).ok_or(AllocError::SingularViewCovariance)?;
    let surprise = &views.target - &views.pick * prior_mean;
    let correction = factor.solve(&surprise).ok_or(AllocError::SingularViewCovariance)?;
    Ok(Posterior {
        mean: prior_mean + &sp * correction,
        cov: linalg::symmetrize(&(prior_cov - &sp * gain_t)),
    })
}

/// Conditional covariance in precision form `(Σ_m⁻¹ + PᵀΣ_ε⁻¹P)⁻¹`.
pub fn bl_conditional_cov_precision(prior_cov: &DMatrix<f64>, views: &Views) -> Result<DMatrix<f64>> {
    let noise_inv = linalg::spd_inverse(&views.noise_cov).map_err(|_| AllocError::SingularViewCovariance)?;
    let precision = linalg::spd_inverse(prior_cov)? + views.pick.transpose() * noise_inv * &views.pick;
    linalg::spd_inverse(&precision)
}

/// Covariance handed to the optimizer alongside blended returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovarianceChoice {
    /// Keep the estimated covariance (the conditional one shrinks risk and inflates bets).
    #[default]
    Empirical,
    /// Use the conditional covariance of the blend.
    BlConditional,
}

impl std::str::FromStr for CovarianceChoice {
    type Err = AllocError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "empirical" => Ok(CovarianceChoice::Empirical),
            "bl_conditional" => Ok(CovarianceChoice::BlConditional),
            other => Err(AllocError::InvalidInput(format!("unknown covariance choice '{other}' (expected empirical or bl_conditional)"))),
        }
    }
}

/// Covariance to optimize with after blending grade views of confidence `tau`.
///
/// The grade views are absolute views on every asset with noise `τΣ`, whose conditional
/// covariance is `τ/(1+τ)·Σ`.
pub fn downstream_covariance(sigma: &DMatrix<f64>, tau: f64, choice: CovarianceChoice) -> Result<DMatrix<f64>> {
    match choice {
        CovarianceChoice::Empirical => Ok(sigma.clone()),
        CovarianceChoice::BlConditional => {
            let views = Views::absolute(DVector::zeros(sigma.nrows()), sigma, tau)?;
            Ok(bl_conditional(&DVector::zeros(sigma.nrows()), sigma, &views)?.cov)
        }
    }
}

/// Grade-based views: integer scores on a symmetric scale of `grade_count` grades.
#[derive(Debug, Clone, PartialEq)]
pub struct GradeViews {
    /// One score per asset in `[−n_s, n_s]`.
    pub scores: Vec<i32>,
    /// Sharpe-ratio increment of the strongest grade (default 1).
    pub delta: f64,
    /// Confidence in the strategic allocation relative to the views (τ > 0).
    pub tau: f64,
    /// Number of grades (odd, default 7).
    pub grade_count: usize,
}

impl GradeViews {
    /// Seven-grade scale with `δ = 1`.
    pub fn new(scores: Vec<i32>, tau: f64) -> Self {
        GradeViews { scores, delta: 1.0, tau, grade_count: 7 }
    }

    /// Range index `n_s = (grade_count − 1)/2`.
    pub fn range_index(&self) -> i32 {
        ((self.grade_count.saturating_sub(1)) / 2) as i32
    }

    /// Checks `τ > 0`, an odd grade count ≥ 3 and scores within range.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.scores.len() != n {
            return Err(AllocError::DimensionMismatch(format!("{} scores for {n} assets", self.scores.len())));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() || !self.delta.is_finite() {
            return Err(AllocError::InvalidInput("τ must be positive and δ finite".into()));
        }
        if self.grade_count < 3 || self.grade_count % 2 == 0 {
            return Err(AllocError::InvalidInput("the grade scale must have an odd number (≥ 3) of grades".into()));
        }
        let ns = self.range_index();
        if let Some(s) = self.scores.iter().find(|s| s.abs() > ns) {
            return Err(AllocError::InvalidInput(format!("grade {s} outside ±{ns}")));
        }
        Ok(())
    }
}

/// Expected returns produced from grades.
#[derive(Debug, Clone, PartialEq)]
pub struct GradeReturns {
    /// Returns implied by the strategic portfolio (`μ̃`).
    pub implied: DVector<f64>,
    /// Returns under the manager's views (`μ̆ᵢ = μ̃ᵢ + δ(sᵢ/n_s)σᵢ`).
    pub view: DVector<f64>,
    /// Blend `τ/(1+τ)·μ̃ + 1/(1+τ)·μ̆`.
    pub blended: DVector<f64>,
}

/// Converts grades into expected returns around the strategic allocation.
///
/// The blend is evaluated as `μ̃ᵢ + δ(sᵢ/n_s)σᵢ/(1+τ)` so a zero grade returns the
/// implied return exactly.
pub fn grades_to_expected_returns(
    strategic: &DVector<f64>,
    sigma: &DMatrix<f64>,
    r: f64,
    sharpe: f64,
    grades: &GradeViews,
) -> Result<GradeReturns> {
    let n = strategic.len();
    grades.validate(n)?;
    let implied = implied_returns(strategic, sigma, r, sharpe)?;
    let ns = f64::from(grades.range_index());
    let mut view = implied.clone();
    let mut blended = implied.clone();
    for i in 0..n {
        let vol = sigma[(i, i)].sqrt();
        if !(vol > 0.0) {
            return Err(AllocError::InvalidInput(format!("asset {i} has zero volatility")));
        }
        let bump = grades.delta * f64::from(grades.scores[i]) / ns * vol;
        view[i] += bump;
        blended[i] += bump / (1.0 + grades.tau);
    }
    Ok(GradeReturns { implied, view, blended })
}

//! Tikhonov/ridge regularization, shrunk correlations, spectral filters and the
//! Ledoit–Wolf correspondence.

use nalgebra::{DMatrix, DVector};

use crate::error::{AllocError, Result};
use crate::linalg::{self, SVD_RANK_CUTOFF};
use crate::mvo_core::{ConstraintSet, MvoInputs};
use crate::qp_solver;
use crate::report::SolveReport;

/// Shape of a penalty on `Γ(x − x₀)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PenaltyKind {
    /// `ϱ‖Γ(x − x₀)‖₁`.
    L1,
    /// `½ϱ‖Γ(x − x₀)‖₂²`.
    L2,
    /// `(ϱ/p)‖Γ(x − x₀)‖_p^p`.
    Lp(f64),
}

impl PenaltyKind {
    /// Order `p` of the norm.
    pub fn order(self) -> f64 {
        match self {
            PenaltyKind::L1 => 1.0,
            PenaltyKind::L2 => 2.0,
            PenaltyKind::Lp(p) => p,
        }
    }
}

/// A penalty `ϱ·φ(Γ(x − x₀))`.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltySpec {
    /// Norm shape.
    pub kind: PenaltyKind,
    /// Penalty weight `ϱ ≥ 0`.
    pub rho: f64,
    /// Square scaling matrix `Γ`.
    pub gamma_matrix: DMatrix<f64>,
    /// Anchor portfolio `x₀`.
    pub anchor: DVector<f64>,
}

impl PenaltySpec {
    /// Validated constructor.
    pub fn new(kind: PenaltyKind, rho: f64, gamma_matrix: DMatrix<f64>, anchor: DVector<f64>) -> Result<Self> {
        let spec = PenaltySpec { kind, rho, gamma_matrix, anchor };
        spec.validate()?;
        Ok(spec)
    }

    /// Penalty with `Γ = I`.
    pub fn identity(kind: PenaltyKind, rho: f64, anchor: DVector<f64>) -> Result<Self> {
        let n = anchor.len();
        PenaltySpec::new(kind, rho, DMatrix::identity(n, n), anchor)
    }

    /// Ridge penalty `½ϱ‖x − x₀‖₂²`.
    pub fn ridge(rho: f64, anchor: DVector<f64>) -> Result<Self> {
        PenaltySpec::identity(PenaltyKind::L2, rho, anchor)
    }

    /// Checks `ϱ ≥ 0`, `p > 0` and the dimensions.
    pub fn validate(&self) -> Result<()> {
        if !(self.rho >= 0.0) || !self.rho.is_finite() {
            return Err(AllocError::InvalidInput(format!("penalty weight must be non-negative, got {}", self.rho)));
        }
        let p = self.kind.order();
        if !(p > 0.0) || !p.is_finite() {
            return Err(AllocError::InvalidInput(format!("penalty order must be positive, got {p}")));
        }
        let n = self.anchor.len();
        if self.gamma_matrix.shape() != (n, n) {
            return Err(AllocError::DimensionMismatch(format!(
                "penalty matrix is {}x{} but the anchor has {n} entries",
                self.gamma_matrix.nrows(),
                self.gamma_matrix.ncols()
            )));
        }
        Ok(())
    }

    /// Dimension of the weight vector.
    pub fn dim(&self) -> usize {
        self.anchor.len()
    }

    /// Penalty value at `x`.
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        let d = &self.gamma_matrix * (x - &self.anchor);
        match self.kind {
            PenaltyKind::L1 => self.rho * d.lp_norm(1),
            PenaltyKind::L2 => 0.5 * self.rho * d.norm_squared(),
            PenaltyKind::Lp(p) => self.rho / p * d.iter().map(|v| v.abs().powf(p)).sum::<f64>(),
        }
    }
}

/// Solution of an equality-constrained quadratic through its KKT system
/// `[[Q, A₂ᵀ], [A₂, 0]] [x; λ] = [r; b₂]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KktSolution {
    /// Primal solution.
    pub x: DVector<f64>,
    /// Multipliers of the equality rows (empty without constraints).
    pub multipliers: DVector<f64>,
}

/// Solves `[[Q, A₂ᵀ], [A₂, 0]] [x; λ] = [r; b₂]` directly.
pub fn solve_kkt(q: &DMatrix<f64>, r: &DVector<f64>, eq: Option<(&DMatrix<f64>, &DVector<f64>)>) -> Result<KktSolution> {
    let n = r.len();
    let Some((a2, b2)) = eq else {
        let x = linalg::solve_square(q, r).ok_or(AllocError::SingularKkt)?;
        return Ok(KktSolution { x, multipliers: DVector::zeros(0) });
    };
    if a2.ncols() != n || a2.nrows() != b2.len() {
        return Err(AllocError::DimensionMismatch("equality block does not match the unknowns".into()));
    }
    let m = a2.nrows();
    let mut kkt = DMatrix::zeros(n + m, n + m);
    kkt.view_mut((0, 0), (n, n)).copy_from(q);
    kkt.view_mut((0, n), (n, m)).copy_from(&a2.transpose());
    kkt.view_mut((n, 0), (m, n)).copy_from(a2);
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(r);
    rhs.rows_mut(n, m).copy_from(b2);
    let sol = linalg::solve_square(&kkt, &rhs).ok_or(AllocError::SingularKkt)?;
    let residual = linalg::inf_norm(&(&kkt * &sol - &rhs));
    let scale = 1.0 + linalg::max_abs(&kkt) * linalg::inf_norm(&sol) + linalg::inf_norm(&rhs);
    if residual > 1e-10 * scale {
        return Err(AllocError::SingularKkt);
    }
    Ok(KktSolution { x: sol.rows(0, n).into_owned(), multipliers: sol.rows(n, m).into_owned() })
}

/// Tikhonov-regularized least squares
/// `min ½‖A₁x − b₁‖² + ½ϱ‖Γ(x − x₀)‖²` subject to `A₂x = b₂`.
///
/// Without equalities the stacked least-squares problem is solved through its SVD
/// (so `ϱ = 0` yields `A₁†b₁`); with equalities the KKT system is solved directly.
pub fn tikhonov_solve(
    a1: &DMatrix<f64>,
    b1: &DVector<f64>,
    penalty: &PenaltySpec,
    eq: Option<(&DMatrix<f64>, &DVector<f64>)>,
) -> Result<KktSolution> {
    penalty.validate()?;
    if penalty.kind != PenaltyKind::L2 {
        return Err(AllocError::InvalidInput("Tikhonov regularization needs an L2 penalty".into()));
    }
    let n = a1.ncols();
    if a1.nrows() != b1.len() || penalty.dim() != n {
        return Err(AllocError::DimensionMismatch("least-squares block does not match the penalty".into()));
    }
    let g = &penalty.gamma_matrix;
    if eq.is_none() {
        let root = penalty.rho.sqrt();
        let m = a1.nrows();
        let mut stacked = DMatrix::zeros(m + n, n);
        stacked.view_mut((0, 0), (m, n)).copy_from(a1);
        stacked.view_mut((m, 0), (n, n)).copy_from(&(g * root));
        let mut target = DVector::zeros(m + n);
        target.rows_mut(0, m).copy_from(b1);
        target.rows_mut(m, n).copy_from(&(g * &penalty.anchor * root));
        let x = linalg::pinv(&stacked) * target;
        return Ok(KktSolution { x, multipliers: DVector::zeros(0) });
    }
    let gram = g.transpose() * g;
    let q = a1.transpose() * a1 + &gram * penalty.rho;
    let r = a1.transpose() * b1 + &gram * &penalty.anchor * penalty.rho;
    solve_kkt(&q, &r, eq)
}

/// Ridge-regularized mean-variance problem
/// `min ½xᵀΣx − γxᵀ(μ − r·1) + ½ϱ‖x − x₀‖²` over `constraints`.
///
/// Unconstrained, the solution is `(Σ + ϱI)⁻¹(γ(μ − r·1) + ϱx₀)`; otherwise the QP on
/// `Σ + ϱI` with linear term `−(γ(μ − r·1) + ϱx₀)` is solved. The reported objective
/// includes the penalty.
pub fn ridge_mvo(inputs: &MvoInputs, gamma: f64, rho2: f64, anchor: &DVector<f64>, constraints: &ConstraintSet) -> Result<SolveReport> {
    let n = inputs.n();
    if anchor.len() != n {
        return Err(AllocError::DimensionMismatch("anchor length differs from the number of assets".into()));
    }
    if !(rho2 >= 0.0) || !rho2.is_finite() || !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(AllocError::InvalidInput("gamma and rho must be finite and non-negative".into()));
    }
    constraints.validate(n)?;
    let q = &inputs.sigma + DMatrix::identity(n, n) * rho2;
    let c = -(inputs.excess_mu() * gamma + anchor * rho2);
    let mut report = if constraints.is_empty() {
        let x = if rho2 == 0.0 {
            linalg::spd_inverse(&q)? * -&c
        } else {
            linalg::solve_square(&q, &-&c).ok_or(AllocError::SingularCovariance)?
        };
        SolveReport::direct(x, 0.0)
    } else {
        qp_solver::solve_qp(&constraints.to_qp(q, c))?
    };
    let x = &report.weights;
    report.objective = inputs.objective(x, gamma) + 0.5 * rho2 * (x - anchor).norm_squared();
    report.gamma = Some(gamma);
    Ok(report)
}

/// Weight matrix `ω(ϱ) = (I + ϱΣ⁻¹)⁻¹ = (Σ + ϱI)⁻¹Σ` of the unconstrained ridge
/// solution `ω·x*(γ) + (I − ω)·x₀`.
pub fn ridge_weight_matrix(sigma: &DMatrix<f64>, rho2: f64) -> Result<DMatrix<f64>> {
    let n = sigma.nrows();
    let shifted = sigma + DMatrix::identity(n, n) * rho2;
    linalg::solve_square_mat(&shifted, sigma).ok_or(AllocError::SingularCovariance)
}

/// How the ridge penalty is scaled when reading it as a correlation shrinkage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShrinkMode {
    /// `Σ + ϱI`: variances grow by `ϱ`, correlations shrink accordingly.
    Identity,
    /// Penalty scaled by the variances: volatilities are kept and correlations are
    /// divided by `1 + ϱ`.
    DiagSigma,
}

/// Volatilities and correlations of the ridge-regularized covariance.
pub fn shrunk_correlation(sigma: &DMatrix<f64>, rho2: f64, mode: ShrinkMode) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if !(rho2 >= 0.0) || !rho2.is_finite() {
        return Err(AllocError::InvalidInput(format!("rho must be non-negative, got {rho2}")));
    }
    linalg::ensure_symmetric(sigma, 1e-12)?;
    let n = sigma.nrows();
    Ok(match mode {
        ShrinkMode::Identity => linalg::vols_and_correlation(&(sigma + DMatrix::identity(n, n) * rho2)),
        ShrinkMode::DiagSigma => {
            let (vols, corr) = linalg::vols_and_correlation(sigma);
            let shrunk = DMatrix::from_fn(n, n, |i, j| if i == j { corr[(i, j)] } else { corr[(i, j)] / (1.0 + rho2) });
            (vols, shrunk)
        }
    })
}

/// Spectral filter `G(s; ϱ)` applied to the singular values of a matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum FilterSpec {
    /// `G = s†` (plain pseudo-inverse).
    None,
    /// `G = s/(s² + ϱ)`.
    Ridge { rho: f64 },
    /// `G = 1/((1 + ϱ)s)`: ridge with a penalty sharing the spectrum of the matrix.
    DiagRidge { rho: f64 },
    /// `G = 1{s ≥ ϱ}·s†` (denoising by deletion).
    HardThreshold { rho: f64 },
    /// `G = s₁/(s₁² + ϱs₂²)` for a penalty matrix with singular values `s₂` sharing the
    /// right singular vectors.
    Coherent { rho: f64, penalty_singular_values: DVector<f64> },
}

impl FilterSpec {
    fn rho(&self) -> f64 {
        match self {
            FilterSpec::None => 0.0,
            FilterSpec::Ridge { rho } | FilterSpec::DiagRidge { rho } | FilterSpec::HardThreshold { rho } | FilterSpec::Coherent { rho, .. } => *rho,
        }
    }

    /// Filter values for singular values `s` (entries below the rank cutoff map to 0).
    pub fn apply(&self, s: &DVector<f64>) -> Result<DVector<f64>> {
        let rho = self.rho();
        if !(rho >= 0.0) || !rho.is_finite() {
            return Err(AllocError::InvalidInput(format!("filter parameter must be non-negative, got {rho}")));
        }
        if let FilterSpec::Coherent { penalty_singular_values, .. } = self {
            if penalty_singular_values.len() != s.len() {
                return Err(AllocError::DimensionMismatch(format!(
                    "{} penalty singular values for {} singular values",
                    penalty_singular_values.len(),
                    s.len()
                )));
            }
        }
        let smax = s.iter().copied().fold(0.0_f64, f64::max);
        Ok(DVector::from_fn(s.len(), |k, _| {
            let sk = s[k];
            if !(sk > SVD_RANK_CUTOFF * smax) {
                return 0.0;
            }
            match self {
                FilterSpec::None => 1.0 / sk,
                FilterSpec::Ridge { rho } => sk / (sk * sk + rho),
                FilterSpec::DiagRidge { rho } => 1.0 / ((1.0 + rho) * sk),
                FilterSpec::HardThreshold { rho } => {
                    if sk >= *rho {
                        1.0 / sk
                    } else {
                        0.0
                    }
                }
                FilterSpec::Coherent { rho, penalty_singular_values } => {
                    let s2 = penalty_singular_values[k];
                    sk / (sk * sk + rho * s2 * s2)
                }
            }
        }))
    }
}

/// How the filtered Gram matrix `V diag(s²(ϱ)) Vᵀ` is formed from `G = G(s; ϱ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GramMode {
    /// `s²(ϱ) = G† ⊙ G†` (default).
    #[default]
    InverseSquared,
    /// `s²(ϱ) = G(s ⊙ s; ϱ)†`.
    FilterOfSquares,
    /// `s²(ϱ) = G† ⊙ s`.
    InverseTimesS,
}

/// Filtered pseudo-inverse and Gram matrix of a matrix `A₁ = U diag(s) Vᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFilter {
    /// Left singular vectors.
    pub u: DMatrix<f64>,
    /// Singular values (descending).
    pub singular_values: DVector<f64>,
    /// Right singular vectors.
    pub v: DMatrix<f64>,
    /// Filter values `G(s; ϱ)`.
    pub filter_values: DVector<f64>,
    /// Regularized squared spectrum `s²(ϱ)`.
    pub gram_spectrum: DVector<f64>,
    /// `A₁†(ϱ) = V diag(G) Uᵀ`.
    pub pinv: DMatrix<f64>,
    /// `Q(ϱ) = V diag(s²(ϱ)) Vᵀ`.
    pub gram: DMatrix<f64>,
}

impl SpectralFilter {
    /// Condition number of the filtered pseudo-inverse: ratio of the largest to the
    /// smallest nonzero filter value.
    pub fn condition_number(&self) -> f64 {
        let kept: Vec<f64> = self.filter_values.iter().map(|g| g.abs()).filter(|g| *g > 0.0).collect();
        let hi = kept.iter().copied().fold(0.0_f64, f64::max);
        let lo = kept.iter().copied().fold(f64::INFINITY, f64::min);
        hi / lo
    }
}

fn safe_inverse(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        1.0 / v
    }
}

/// Applies a spectral filter to `a1` with the default Gram construction.
pub fn spectral_filter(a1: &DMatrix<f64>, filter: &FilterSpec) -> Result<SpectralFilter> {
    spectral_filter_with(a1, filter, GramMode::default())
}

/// Applies a spectral filter to `a1` with an explicit Gram construction.
pub fn spectral_filter_with(a1: &DMatrix<f64>, filter: &FilterSpec, mode: GramMode) -> Result<SpectralFilter> {
    if a1.iter().all(|v| *v == 0.0) || a1.is_empty() {
        return Err(AllocError::InvalidInput("matrix to filter is zero".into()));
    }
    let (u, s, v) = linalg::svd_desc(a1);
    let g = filter.apply(&s)?;
    if g.iter().all(|x| *x == 0.0) {
        return Err(AllocError::AllSingularValuesFiltered);
    }
    let gram_spectrum = match mode {
        GramMode::InverseSquared => g.map(|x| safe_inverse(x).powi(2)),
        GramMode::FilterOfSquares => filter.apply(&s.component_mul(&s))?.map(safe_inverse),
        GramMode::InverseTimesS => g.zip_map(&s, |x, sk| safe_inverse(x) * sk),
    };
    let pinv = &v * DMatrix::from_diagonal(&g) * u.transpose();
    let gram = &v * DMatrix::from_diagonal(&gram_spectrum) * v.transpose();
    Ok(SpectralFilter { u, singular_values: s, v, filter_values: g, gram_spectrum, pinv, gram })
}

/// Filtered normal equations
/// `[[V diag(s²(ϱ)) Vᵀ, A₂ᵀ], [A₂, 0]] [x; λ] = [V diag(s²(ϱ) ⊙ G) Uᵀb₁; b₂]`.
///
/// The right-hand side is chosen so that without constraints `x = A₁†(ϱ) b₁`: with the
/// default Gram construction it is `V diag(G†) Uᵀb₁`, and with
/// [`GramMode::InverseTimesS`] it is the plain `A₁ᵀb₁`.
pub fn filtered_normal_solve(
    a1: &DMatrix<f64>,
    b1: &DVector<f64>,
    filter: &FilterSpec,
    mode: GramMode,
    eq: Option<(&DMatrix<f64>, &DVector<f64>)>,
) -> Result<KktSolution> {
    if a1.nrows() != b1.len() {
        return Err(AllocError::DimensionMismatch("least-squares block does not match its target".into()));
    }
    let f = spectral_filter_with(a1, filter, mode)?;
    let weights = f.gram_spectrum.component_mul(&f.filter_values);
    let rhs = &f.v * DMatrix::from_diagonal(&weights) * f.u.transpose() * b1;
    solve_kkt(&f.gram, &rhs, eq)
}

/// Ridge penalty equivalent to Ledoit–Wolf shrinkage `α*Σ̂ + (1 − α*)Φ̂`:
/// `ϱ = (1 − α*)/α*` and `Γ` the upper Cholesky factor of `Φ̂`, so that
/// `Σ̂ + ϱΓᵀΓ = (α*Σ̂ + (1 − α*)Φ̂)/α*`.
pub fn ledoit_wolf_to_tikhonov(alpha_star: f64, target: &DMatrix<f64>) -> Result<PenaltySpec> {
    if !(alpha_star > 0.0 && alpha_star <= 1.0) {
        return Err(AllocError::InvalidInput(format!("shrinkage intensity must lie in (0, 1], got {alpha_star}")));
    }
    let gamma_matrix = linalg::upper_cholesky(target)?;
    let n = target.nrows();
    PenaltySpec::new(PenaltyKind::L2, (1.0 - alpha_star) / alpha_star, gamma_matrix, DVector::zeros(n))
}

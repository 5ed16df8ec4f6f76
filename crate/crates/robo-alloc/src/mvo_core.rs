//! Mean-variance optimization: the risk-tolerance problem, target calibration, the
//! Sharpe bound, implied returns, tracking-error transformation, the hedging-portfolio
//! (Stevens) decomposition and constraint-implied covariance shrinkage.

use nalgebra::{DMatrix, DVector};

use crate::error::{AllocError, Result};
use crate::linalg;
use crate::qp_solver::{self, QpProblem};
use crate::report::SolveReport;

/// Expected returns, covariance and risk-free rate.
#[derive(Debug, Clone, PartialEq)]
pub struct MvoInputs {
    /// Expected returns.
    pub mu: DVector<f64>,
    /// Symmetric positive semi-definite covariance.
    pub sigma: DMatrix<f64>,
    /// Risk-free rate (same period as `mu`).
    pub r: f64,
}

impl MvoInputs {
    /// Validates dimensions, symmetry and positive semi-definiteness.
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>, r: f64) -> Result<Self> {
        let n = mu.len();
        if n == 0 {
            return Err(AllocError::InvalidInput("no assets".into()));
        }
        if sigma.shape() != (n, n) {
            return Err(AllocError::DimensionMismatch(format!(
                "mu has {n} entries but sigma is {}x{}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        if !r.is_finite() || mu.iter().chain(sigma.iter()).any(|v| !v.is_finite()) {
            return Err(AllocError::InvalidInput("non-finite inputs".into()));
        }
        linalg::ensure_symmetric(&sigma, 1e-12)?;
        let sigma = crate::market_data::enforce_psd(&sigma)?;
        Ok(MvoInputs { mu, sigma, r })
    }

    /// Number of assets.
    pub fn n(&self) -> usize {
        self.mu.len()
    }

    /// Excess expected returns `μ − r·1`.
    pub fn excess_mu(&self) -> DVector<f64> {
        self.mu.add_scalar(-self.r)
    }

    /// Expected return of `x`, the residual `1 − 1ᵀx` being held in the risk-free asset.
    pub fn portfolio_return(&self, x: &DVector<f64>) -> f64 {
        self.r + x.dot(&self.excess_mu())
    }

    /// Volatility `√(xᵀΣx)`.
    pub fn volatility(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.sigma * x)).max(0.0).sqrt()
    }

    /// Sharpe ratio `xᵀ(μ − r·1) / √(xᵀΣx)`.
    pub fn sharpe(&self, x: &DVector<f64>) -> f64 {
        x.dot(&self.excess_mu()) / self.volatility(x)
    }

    /// Objective `½xᵀΣx − γxᵀ(μ − r·1)`.
    pub fn objective(&self, x: &DVector<f64>, gamma: f64) -> f64 {
        0.5 * x.dot(&(&self.sigma * x)) - gamma * x.dot(&self.excess_mu())
    }
}

/// Linear constraints on the weights.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConstraintSet {
    /// `1ᵀx = b`.
    pub budget: Option<f64>,
    /// Lower bounds.
    pub lower: Option<DVector<f64>>,
    /// Upper bounds.
    pub upper: Option<DVector<f64>>,
    /// General equalities `A x = b`.
    pub eq: Option<(DMatrix<f64>, DVector<f64>)>,
    /// General inequalities `A x ≥ b`.
    pub ineq: Option<(DMatrix<f64>, DVector<f64>)>,
}

impl ConstraintSet {
    /// No constraint at all.
    pub fn none() -> Self {
        ConstraintSet::default()
    }

    /// Budget constraint `1ᵀx = b` only.
    pub fn budget(b: f64) -> Self {
        ConstraintSet { budget: Some(b), ..Default::default() }
    }

    /// Fully invested long-only portfolios (`1ᵀx = 1`, `x ≥ 0`).
    pub fn long_only(n: usize) -> Self {
        ConstraintSet::budget(1.0).with_bounds(Some(DVector::zeros(n)), None)
    }

    /// Sets the bounds.
    pub fn with_bounds(mut self, lower: Option<DVector<f64>>, upper: Option<DVector<f64>>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    /// Sets identical bounds on every asset.
    pub fn with_uniform_bounds(self, n: usize, lower: f64, upper: f64) -> Self {
        self.with_bounds(Some(DVector::from_element(n, lower)), Some(DVector::from_element(n, upper)))
    }

    /// Adds general equalities.
    pub fn with_eq(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.eq = Some((a, b));
        self
    }

    /// Adds general inequalities `A x ≥ b`.
    pub fn with_ineq(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.ineq = Some((a, b));
        self
    }

    /// `true` when no constraint is present.
    pub fn is_empty(&self) -> bool {
        self.budget.is_none() && self.lower.is_none() && self.upper.is_none() && self.eq.is_none() && self.ineq.is_none()
    }

    /// Stacked equality rows: the budget row first (if any), then the general equalities.
    pub fn equality_rows(&self, n: usize) -> Option<(DMatrix<f64>, DVector<f64>)> {
        let mut rows: Vec<DVector<f64>> = Vec::new();
        let mut rhs = Vec::new();
        if let Some(b) = self.budget {
            rows.push(DVector::from_element(n, 1.0));
            rhs.push(b);
        }
        if let Some((a, b)) = &self.eq {
            for i in 0..a.nrows() {
                rows.push(a.row(i).transpose());
                rhs.push(b[i]);
            }
        }
        if rows.is_empty() {
            return None;
        }
        let m = DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
        Some((m, DVector::from_vec(rhs)))
    }

    /// Checks the dimensions against `n` assets.
    pub fn validate(&self, n: usize) -> Result<()> {
        for v in [&self.lower, &self.upper].into_iter().flatten() {
            if v.len() != n {
                return Err(AllocError::DimensionMismatch(format!("bound of length {} for {n} assets", v.len())));
            }
        }
        for (a, b) in [&self.eq, &self.ineq].into_iter().flatten() {
            if a.ncols() != n || a.nrows() != b.len() {
                return Err(AllocError::DimensionMismatch(format!(
                    "constraint block {}x{} with {} right-hand sides for {n} assets",
                    a.nrows(),
                    a.ncols(),
                    b.len()
                )));
            }
        }
        if let (Some(l), Some(u)) = (&self.lower, &self.upper) {
            if (0..n).any(|i| l[i] > u[i]) {
                return Err(AllocError::Infeasible("lower bound above upper bound".into()));
            }
        }
        Ok(())
    }

    /// Builds the QP `min ½xᵀQx + cᵀx` over this set.
    pub fn to_qp(&self, q: DMatrix<f64>, c: DVector<f64>) -> QpProblem {
        let n = c.len();
        QpProblem {
            q,
            c,
            eq: self.equality_rows(n),
            ineq: self.ineq.clone(),
            lower: self.lower.clone(),
            upper: self.upper.clone(),
        }
    }
}

/// Solves `min ½xᵀΣx − γxᵀ(μ − r·1)` over `constraints`.
///
/// Without constraints the closed form `x = γΣ⁻¹(μ − r·1)` is used; any constraint
/// routes the problem to the active-set QP solver.
pub fn solve_gamma_problem(inputs: &MvoInputs, gamma: f64, constraints: &ConstraintSet) -> Result<SolveReport> {
    if !gamma.is_finite() || gamma < 0.0 {
        return Err(AllocError::InvalidInput(format!("gamma must be finite and non-negative, got {gamma}")));
    }
    let n = inputs.n();
    constraints.validate(n)?;
    let mut report = if constraints.is_empty() {
        let precision = linalg::spd_inverse(&inputs.sigma)?;
        let x = precision * inputs.excess_mu() * gamma;
        let obj = inputs.objective(&x, gamma);
        SolveReport::direct(x, obj)
    } else {
        let qp = constraints.to_qp(inputs.sigma.clone(), -inputs.excess_mu() * gamma);
        qp_solver::solve_qp(&qp)?
    };
    report.gamma = Some(gamma);
    Ok(report)
}

/// Calibration target for the risk-tolerance parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    /// Portfolio expected return `μ*`.
    ExpectedReturn(f64),
    /// Portfolio volatility `σ*`.
    Volatility(f64),
}

/// Outcome of a risk-tolerance calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    /// Calibrated risk-tolerance parameter.
    pub gamma: f64,
    /// Solution at the calibrated parameter.
    pub report: SolveReport,
    /// `(γ, metric)` pairs evaluated during the search, in evaluation order.
    pub samples: Vec<(f64, f64)>,
}

/// Default tolerance on the calibrated metric.
pub const CALIBRATION_TOL: f64 = 1e-6;
const BRACKET_LIMIT: f64 = 1e6;
const BISECTION_STEPS: usize = 60;

/// Finds `γ ≥ 0` with `metric(γ) = target` for a metric that is nondecreasing in `γ`.
///
/// The bracket starts at `[0, 1]` and its upper end is doubled until the target is
/// bracketed (up to `γ = 10⁶`); at most 60 bisection steps follow, stopping once
/// `|metric − target| ≤ tol`.
pub fn bisect_gamma<F>(mut eval: F, target: f64, tol: f64) -> Result<Calibration>
where
    F: FnMut(f64) -> Result<(f64, SolveReport)>,
{
    let mut samples = Vec::new();
    let mut probe = |g: f64, samples: &mut Vec<(f64, f64)>| -> Result<(f64, SolveReport)> {
        let (m, rep) = eval(g)?;
        samples.push((g, m));
        Ok((m, rep))
    };
    let (m0, rep0) = probe(0.0, &mut samples)?;
    if (m0 - target).abs() <= tol {
        return Ok(Calibration { gamma: 0.0, report: rep0, samples });
    }
    if m0 > target {
        return Err(AllocError::TargetUnreachable(format!(
            "target {target} lies below the minimum attainable value {m0}"
        )));
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    loop {
        let (m, rep) = probe(hi, &mut samples)?;
        if (m - target).abs() <= tol {
            return Ok(Calibration { gamma: hi, report: rep, samples });
        }
        if m > target {
            break;
        }
        lo = hi;
        hi *= 2.0;
        if hi > BRACKET_LIMIT {
            return Err(AllocError::TargetUnreachable(format!(
                "target {target} not reached for gamma up to {BRACKET_LIMIT:e} (last value {m})"
            )));
        }
    }
    let mut best: Option<(f64, f64, SolveReport)> = None;
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        let (m, rep) = probe(mid, &mut samples)?;
        let gap = (m - target).abs();
        if gap <= tol {
            return Ok(Calibration { gamma: mid, report: rep, samples });
        }
        if best.as_ref().map_or(true, |(_, g, _)| gap < *g) {
            best = Some((mid, gap, rep));
        }
        if m < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (gamma, gap, _) = best.expect("at least one bisection step");
    Err(AllocError::TargetUnreachable(format!(
        "bisection stalled at gamma {gamma} with residual {gap:e}"
    )))
}

/// Calibrates γ so that the optimal portfolio hits an expected-return or volatility target.
pub fn calibrate_gamma(inputs: &MvoInputs, target: Target, constraints: &ConstraintSet) -> Result<Calibration> {
    calibrate_gamma_with_tol(inputs, target, constraints, CALIBRATION_TOL)
}

/// [`calibrate_gamma`] with an explicit tolerance.
pub fn calibrate_gamma_with_tol(inputs: &MvoInputs, target: Target, constraints: &ConstraintSet, tol: f64) -> Result<Calibration> {
    constraints.validate(inputs.n())?;
    if constraints.is_empty() {
        let precision = linalg::spd_inverse(&inputs.sigma)?;
        let ex = inputs.excess_mu();
        let quad = ex.dot(&(&precision * &ex));
        if quad <= 0.0 {
            return Err(AllocError::TargetUnreachable("expected excess returns are zero".into()));
        }
        let gamma = match target {
            Target::Volatility(s) => s / quad.sqrt(),
            Target::ExpectedReturn(m) => (m - inputs.r) / quad,
        };
        if !(gamma >= 0.0) {
            return Err(AllocError::TargetUnreachable(format!("target requires a negative gamma ({gamma})")));
        }
        let report = solve_gamma_problem(inputs, gamma, constraints)?;
        let metric = metric_of(inputs, target, &report.weights);
        return Ok(Calibration { gamma, report, samples: vec![(gamma, metric)] });
    }
    let value = match target {
        Target::Volatility(s) | Target::ExpectedReturn(s) => s,
    };
    bisect_gamma(
        |g| {
            let rep = solve_gamma_problem(inputs, g, constraints)?;
            Ok((metric_of(inputs, target, &rep.weights), rep))
        },
        value,
        tol,
    )
}

fn metric_of(inputs: &MvoInputs, target: Target, x: &DVector<f64>) -> f64 {
    match target {
        Target::Volatility(_) => inputs.volatility(x),
        Target::ExpectedReturn(_) => inputs.portfolio_return(x),
    }
}

/// Upper bound `√((μ − r·1)ᵀΣ⁻¹(μ − r·1))` on the Sharpe ratio of any portfolio.
pub fn max_sharpe_bound(inputs: &MvoInputs) -> Result<f64> {
    let precision = linalg::spd_inverse(&inputs.sigma)?;
    let ex = inputs.excess_mu();
    Ok(ex.dot(&(precision * &ex)).max(0.0).sqrt())
}

/// Risk tolerance `1 / (1ᵀΣ⁻¹(μ − r·1))` for which the unconstrained solution is fully invested.
pub fn full_investment_gamma(inputs: &MvoInputs) -> Result<f64> {
    let precision = linalg::spd_inverse(&inputs.sigma)?;
    let denom = (precision * inputs.excess_mu()).sum();
    if denom <= 0.0 {
        return Err(AllocError::InvalidInput("no positive risk tolerance yields a fully invested portfolio".into()));
    }
    Ok(1.0 / denom)
}

/// Expected returns that make `x0` optimal: `μ̃ = r + SR · Σx0 / √(x0ᵀΣx0)`.
pub fn implied_returns(x0: &DVector<f64>, sigma: &DMatrix<f64>, r: f64, sharpe: f64) -> Result<DVector<f64>> {
    if sigma.shape() != (x0.len(), x0.len()) {
        return Err(AllocError::DimensionMismatch("portfolio and covariance sizes differ".into()));
    }
    let marginal = sigma * x0;
    let var = x0.dot(&marginal);
    if !(var > 0.0) {
        return Err(AllocError::ZeroVolatilityPortfolio);
    }
    Ok((marginal * (sharpe / var.sqrt())).add_scalar(r))
}

/// Returns `μ̃ = μ + Σb/γ`, turning the tracking-error problem around benchmark `b`
/// into a plain risk-tolerance problem (up to an additive constant).
pub fn te_transform(inputs: &MvoInputs, benchmark: &DVector<f64>, gamma: f64) -> Result<MvoInputs> {
    if benchmark.len() != inputs.n() {
        return Err(AllocError::DimensionMismatch("benchmark length differs from the number of assets".into()));
    }
    if gamma == 0.0 || !gamma.is_finite() {
        return Err(AllocError::ZeroGamma);
    }
    Ok(MvoInputs { mu: &inputs.mu + &inputs.sigma * benchmark / gamma, sigma: inputs.sigma.clone(), r: inputs.r })
}

/// Tracking-error volatility `√((x − b)ᵀΣ(x − b))`.
pub fn tracking_error(x: &DVector<f64>, benchmark: &DVector<f64>, sigma: &DMatrix<f64>) -> f64 {
    let d = x - benchmark;
    d.dot(&(sigma * &d)).max(0.0).sqrt()
}

/// Regression of one asset on all the others.
#[derive(Debug, Clone, PartialEq)]
pub struct HedgingStats {
    /// Idiosyncratic expected return `α_i = μ_i − β_iᵀμ_{−i}`.
    pub alpha: f64,
    /// Hedge ratios on the other assets (in their original order).
    pub beta: DVector<f64>,
    /// Share of the variance explained by the hedge.
    pub r2: f64,
    /// Residual (idiosyncratic) volatility.
    pub s: f64,
    /// Expected return of the hedging portfolio.
    pub mu_hat: f64,
    /// Volatility of the hedging portfolio.
    pub sigma_hat: f64,
    /// Hedge-quality ratio `R²/(1 − R²)`.
    pub omega: f64,
    /// Stand-alone weight `γμ_i/σ_i²`.
    pub y_star: f64,
    /// Weight implied by the hedge `γμ̂_i/σ̂_i²` (0 when the hedge has no variance).
    pub z_star: f64,
    /// Optimal weight `γα_i/s_i²`.
    pub x_star: f64,
}

/// Per-asset hedging decomposition of the unconstrained optimal portfolio.
#[derive(Debug, Clone, PartialEq)]
pub struct StevensReport {
    /// Risk tolerance used for the weights.
    pub gamma: f64,
    /// One entry per asset.
    pub assets: Vec<HedgingStats>,
}

/// Decomposes every optimal weight through the regression of the asset on the others.
pub fn stevens_decomposition(inputs: &MvoInputs, gamma: f64) -> Result<StevensReport> {
    let n = inputs.n();
    linalg::spd_inverse(&inputs.sigma)?;
    let mu = inputs.excess_mu();
    let mut assets = Vec::with_capacity(n);
    for i in 0..n {
        let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let var_i = inputs.sigma[(i, i)];
        let (beta, mu_hat, var_hat) = if others.is_empty() {
            (DVector::zeros(0), 0.0, 0.0)
        } else {
            let m = others.len();
            let s_oo = DMatrix::from_fn(m, m, |a, b| inputs.sigma[(others[a], others[b])]);
            let s_oi = DVector::from_fn(m, |a, _| inputs.sigma[(others[a], i)]);
            let chol = nalgebra::Cholesky::new(s_oo).ok_or(AllocError::SingularCovariance)?;
            let beta = chol.solve(&s_oi);
            let mu_o = DVector::from_fn(m, |a, _| mu[others[a]]);
            let mu_hat = beta.dot(&mu_o);
            let var_hat = s_oi.dot(&beta);
            (beta, mu_hat, var_hat)
        };
        let r2 = var_hat / var_i;
        if r2 >= 1.0 - 1e-10 {
            return Err(AllocError::PerfectCollinearity(i));
        }
        let s2 = var_i - var_hat;
        let alpha = mu[i] - mu_hat;
        let z_star = if var_hat > 0.0 { gamma * mu_hat / var_hat } else { 0.0 };
        assets.push(HedgingStats {
            alpha,
            beta,
            r2,
            s: s2.sqrt(),
            mu_hat,
            sigma_hat: var_hat.max(0.0).sqrt(),
            omega: r2 / (1.0 - r2),
            y_star: gamma * mu[i] / var_i,
            z_star,
            x_star: gamma * alpha / s2,
        });
    }
    Ok(StevensReport { gamma, assets })
}

/// Explained variance of the regression of one asset on the `n − 1` others when all
/// `n` assets share the correlation `ρ`: `kρ²/(kρ − (ρ − 1))` with `k = n − 1`
/// regressors (`ρ²` for two assets).
pub fn constant_correlation_r2(n: usize, rho: f64) -> Result<f64> {
    if n < 2 {
        return Err(AllocError::InvalidCorrelation("at least two assets are required".into()));
    }
    let floor = -1.0 / (n as f64 - 1.0);
    if !(rho > floor && rho <= 1.0) {
        return Err(AllocError::InvalidCorrelation(format!("rho = {rho} outside ({floor}, 1]")));
    }
    let k = n as f64 - 1.0;
    Ok(k * rho * rho / (k * rho - (rho - 1.0)))
}

/// Covariance matrix under which the unconstrained (budget-only) solution equals a
/// constrained one, with the implied volatilities and correlations.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpliedCovariance {
    /// `Σ̃ = Σ − (m1ᵀ + 1mᵀ)/b` built from the constraint multipliers.
    pub sigma_tilde: DMatrix<f64>,
    /// `√Σ̃_ii`.
    pub vols: DVector<f64>,
    /// Correlations implied by `Σ̃`.
    pub corr: DMatrix<f64>,
}

/// Recovers the shrunk covariance implied by the multipliers of a constrained solution.
///
/// With stationarity `Σx − γμ̃ + λ_b·1 + A_eqᵀν − A_inᵀλ_in − λ⁻ + λ⁺ = 0`, the vector
/// `m = A_inᵀλ_in + λ⁻ − λ⁺ − A_eqᵀν` (the budget row excluded) defines
/// `Σ̃ = Σ − (m1ᵀ + 1mᵀ)/b`; the budget-only problem under `Σ̃` has the same solution.
pub fn jagannathan_ma_shrinkage(sigma: &DMatrix<f64>, constraints: &ConstraintSet, solution: &SolveReport) -> Result<ImpliedCovariance> {
    let n = sigma.nrows();
    let duals = solution.duals.as_ref().ok_or(AllocError::MissingDuals)?;
    let budget = constraints
        .budget
        .ok_or_else(|| AllocError::InvalidInput("the implied covariance needs a budget constraint".into()))?;
    if budget == 0.0 {
        return Err(AllocError::InvalidInput("budget must be non-zero".into()));
    }
    let mut m = DVector::zeros(n);
    if duals.lower.len() == n {
        m += &duals.lower;
        m -= &duals.upper;
    }
    if let Some((a, _)) = &constraints.ineq {
        if duals.ineq.len() != a.nrows() {
            return Err(AllocError::MissingDuals);
        }
        m += a.transpose() * &duals.ineq;
    }
    if let Some((a, _)) = &constraints.eq {
        if duals.eq.len() != a.nrows() + 1 {
            return Err(AllocError::MissingDuals);
        }
        let nu = duals.eq.rows(1, a.nrows()).into_owned();
        m -= a.transpose() * nu;
    }
    let ones = DVector::from_element(n, 1.0);
    let sigma_tilde = sigma - (&m * ones.transpose() + &ones * m.transpose()) / budget;
    let (vols, corr) = linalg::vols_and_correlation(&sigma_tilde);
    Ok(ImpliedCovariance { sigma_tilde, vols, corr })
}

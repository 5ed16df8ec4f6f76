//! Hyperparameter selection for ridge-type regularization (PRESS, GCV, k-fold
//! cross-validation over parameter grids) and tracking-error level rules.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{AllocError, Result};
use crate::linalg::{self, SquareFactor};

/// Ridge regression data: design `X` (T × K), response `Y` (T) and penalty map `Γ₂`
/// (K × K), with estimator `β̂(ϱ) = (XᵀX + ϱΓ₂Γ₂ᵀ)⁻¹Xᵀy`.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeRegressionData {
    /// Design matrix.
    pub x: DMatrix<f64>,
    /// Response.
    pub y: DVector<f64>,
    /// Penalty map.
    pub gamma2: DMatrix<f64>,
}

impl RidgeRegressionData {
    /// Validated constructor.
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, gamma2: DMatrix<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(AllocError::DimensionMismatch(format!("{} observations but {} responses", x.nrows(), y.len())));
        }
        if gamma2.shape() != (x.ncols(), x.ncols()) {
            return Err(AllocError::DimensionMismatch("penalty map must be K × K".into()));
        }
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(AllocError::InvalidInput("empty regression".into()));
        }
        if x.iter().chain(y.iter()).chain(gamma2.iter()).any(|v| !v.is_finite()) {
            return Err(AllocError::InvalidInput("non-finite regression data".into()));
        }
        Ok(RidgeRegressionData { x, y, gamma2 })
    }

    /// Identity penalty map.
    pub fn with_identity_penalty(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let k = x.ncols();
        RidgeRegressionData::new(x, y, DMatrix::identity(k, k))
    }

    /// Number of observations `T`.
    pub fn observations(&self) -> usize {
        self.x.nrows()
    }

    /// Number of regressors `K`.
    pub fn regressors(&self) -> usize {
        self.x.ncols()
    }

    /// `true` when `T ≤ K`, where the unpenalized fit interpolates the data.
    pub fn is_underdetermined(&self) -> bool {
        self.observations() <= self.regressors()
    }

    /// `Γ₂Γ₂ᵀ`.
    pub fn penalty_gram(&self) -> DMatrix<f64> {
        &self.gamma2 * self.gamma2.transpose()
    }

    /// `S(ϱ) = (XᵀX + ϱΓ₂Γ₂ᵀ)⁻¹`.
    pub fn smoother(&self, rho2: f64) -> Result<DMatrix<f64>> {
        check_rho(rho2)?;
        let normal = self.x.transpose() * &self.x + self.penalty_gram() * rho2;
        let k = self.regressors();
        SquareFactor::new(&normal)
            .and_then(|f| f.solve_mat(&DMatrix::identity(k, k)))
            .map(|s| linalg::symmetrize(&s))
            .ok_or(AllocError::SingularMatrix)
    }

    /// `β̂(ϱ)`.
    pub fn fit(&self, rho2: f64) -> Result<DVector<f64>> {
        Ok(self.smoother(rho2)? * self.x.transpose() * &self.y)
    }

    /// Sub-problem restricted to the given observations.
    pub fn subset(&self, rows: &[usize]) -> RidgeRegressionData {
        RidgeRegressionData {
            x: self.x.select_rows(rows),
            y: DVector::from_iterator(rows.len(), rows.iter().map(|&t| self.y[t])),
            gamma2: self.gamma2.clone(),
        }
    }

    /// Residual sum of squares of `β̂(ϱ)`.
    pub fn rss(&self, rho2: f64) -> Result<f64> {
        Ok((&self.y - &self.x * self.fit(rho2)?).norm_squared())
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho >= 0.0) || !rho.is_finite() {
        return Err(AllocError::InvalidInput(format!("regularization parameter {rho} must be finite and non-negative")));
    }
    Ok(())
}

/// Denominators `1 − x_tᵀS x_t` at or below this value are treated as singular.
pub const LEVERAGE_TOL: f64 = 1e-12;

/// Closed-form leave-one-out prediction error
/// `Σ_t (y_t − x_tᵀβ̂)² / (1 − x_tᵀS(ϱ)x_t)²`.
pub fn press(data: &RidgeRegressionData, rho2: f64) -> Result<f64> {
    let s = data.smoother(rho2)?;
    let beta = &s * data.x.transpose() * &data.y;
    let mut total = 0.0;
    for t in 0..data.observations() {
        let row = data.x.row(t).transpose();
        let denom = 1.0 - row.dot(&(&s * &row));
        if denom <= LEVERAGE_TOL {
            return Err(AllocError::LeverageSingularity(t));
        }
        let resid = data.y[t] - row.dot(&beta);
        total += (resid / denom).powi(2);
    }
    Ok(total)
}

/// `trace(I_T − X S(ϱ) Xᵀ) = Σ_t (1 + λ_t/ϱ)⁻¹` with `λ_t` the eigenvalues of
/// `X(Γ₂Γ₂ᵀ)⁻¹Xᵀ` (at `ϱ = 0`, the number of zero eigenvalues).
pub fn residual_trace(data: &RidgeRegressionData, rho2: f64) -> Result<f64> {
    check_rho(rho2)?;
    let gram = data.penalty_gram();
    let k = data.regressors();
    let inv = SquareFactor::new(&gram)
        .and_then(|f| f.solve_mat(&DMatrix::identity(k, k)))
        .ok_or(AllocError::SingularGamma)?;
    let kernel = linalg::symmetrize(&(&data.x * inv * data.x.transpose()));
    let (lambdas, _) = linalg::sym_eigen_desc(&kernel);
    let top = lambdas.max().max(0.0);
    Ok(lambdas
        .iter()
        .map(|&l| {
            let l = if l <= 1e-12 * top { 0.0 } else { l };
            if rho2 == 0.0 {
                if l == 0.0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                1.0 / (1.0 + l / rho2)
            }
        })
        .sum())
}

/// Generalized cross-validation `T²·RSS(ϱ) / trace²(I_T − X S(ϱ) Xᵀ)`.
pub fn gcv(data: &RidgeRegressionData, rho2: f64) -> Result<f64> {
    let trace = residual_trace(data, rho2)?;
    if trace <= LEVERAGE_TOL {
        return Err(AllocError::InvalidInput("residual projector has zero trace (interpolating fit)".into()));
    }
    let t = data.observations() as f64;
    Ok(t * t * data.rss(rho2)? / (trace * trace))
}

/// Scan of a criterion over a parameter grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridScan {
    /// Grid values in input order.
    pub grid: Vec<f64>,
    /// Criterion value per grid point.
    pub errors: Vec<f64>,
    /// Minimizing grid value (smallest value among ties).
    pub best: f64,
    /// Index of `best` in `grid`.
    pub best_index: usize,
}

/// Evaluates `criterion` at every grid point and picks the minimizer; ties (relative
/// difference ≤ 1e-12) go to the smallest parameter.
pub fn scan_grid<F>(grid: &[f64], mut criterion: F) -> Result<GridScan>
where
    F: FnMut(f64) -> Result<f64>,
{
    if grid.is_empty() {
        return Err(AllocError::GridEmpty);
    }
    let errors = grid.iter().map(|&g| criterion(g)).collect::<Result<Vec<_>>>()?;
    let mut best_index = 0;
    for i in 1..grid.len() {
        let (e, b) = (errors[i], errors[best_index]);
        let tie = (e - b).abs() <= 1e-12 * e.abs().max(b.abs());
        if (e < b && !tie) || (tie && grid[i] < grid[best_index]) {
            best_index = i;
        }
    }
    Ok(GridScan { grid: grid.to_vec(), best: grid[best_index], best_index, errors })
}

/// Fold assignment of `T` observations into `k` (almost) equal groups after a
/// seeded shuffle; the first `T mod k` folds receive one extra observation.
pub fn kfold_partition(t: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > t {
        return Err(AllocError::InvalidInput(format!("fold count {k} outside [2, {t}]")));
    }
    let mut order: Vec<usize> = (0..t).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (t / k, t % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for j in 0..k {
        let len = base + usize::from(j < extra);
        folds.push(order[start..start + len].to_vec());
        start += len;
    }
    Ok(folds)
}

/// k-fold cross-validation error `(1/T) Σⱼ Σ_{t∈Gⱼ} (y_t − x_tᵀβ̂₋ⱼ(ϱ))²` over a grid.
pub fn kfold_cv(data: &RidgeRegressionData, k: usize, grid: &[f64], seed: u64) -> Result<GridScan> {
    if grid.is_empty() {
        return Err(AllocError::GridEmpty);
    }
    let t = data.observations();
    let folds = kfold_partition(t, k, seed)?;
    let trainings: Vec<RidgeRegressionData> = folds
        .iter()
        .map(|fold| {
            let keep: Vec<usize> = (0..t).filter(|i| !fold.contains(i)).collect();
            data.subset(&keep)
        })
        .collect();
    scan_grid(grid, |rho| {
        let mut sse = 0.0;
        for (fold, train) in folds.iter().zip(&trainings) {
            let beta = train.fit(rho)?;
            sse += fold.iter().map(|&i| (data.y[i] - data.x.row(i).dot(&beta.transpose())).powi(2)).sum::<f64>();
        }
        Ok(sse / t as f64)
    })
}

/// Spacing of a parameter grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridScale {
    /// Geometric spacing.
    Log,
    /// Arithmetic spacing.
    Linear,
}

/// Parameter grid `{scale, from, to, points}`, written `log:1e-4:1e2:25`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    /// Spacing.
    pub scale: GridScale,
    /// First value.
    pub from: f64,
    /// Last value.
    pub to: f64,
    /// Number of points.
    pub points: usize,
}

impl Grid {
    /// Validated constructor (log grids need positive endpoints).
    pub fn new(scale: GridScale, from: f64, to: f64, points: usize) -> Result<Self> {
        if points == 0 {
            return Err(AllocError::GridEmpty);
        }
        if !from.is_finite() || !to.is_finite() || from > to {
            return Err(AllocError::InvalidInput(format!("grid bounds [{from}, {to}] are not ordered")));
        }
        if scale == GridScale::Log && from <= 0.0 {
            return Err(AllocError::InvalidInput("log grid needs positive endpoints".into()));
        }
        Ok(Grid { scale, from, to, points })
    }

    /// Grid values in increasing order (endpoints exact).
    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.from];
        }
        let last = (self.points - 1) as f64;
        (0..self.points)
            .map(|i| {
                if i == 0 {
                    return self.from;
                }
                if i + 1 == self.points {
                    return self.to;
                }
                let w = i as f64 / last;
                match self.scale {
                    GridScale::Linear => self.from + w * (self.to - self.from),
                    GridScale::Log => (self.from.ln() + w * (self.to.ln() - self.from.ln())).exp(),
                }
            })
            .collect()
    }
}

impl FromStr for Grid {
    type Err = AllocError;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || AllocError::InvalidInput(format!("grid '{s}' is not of the form scale:from:to:points"));
        if parts.len() != 4 {
            return Err(bad());
        }
        let scale = match parts[0] {
            "log" => GridScale::Log,
            "linear" | "lin" => GridScale::Linear,
            _ => return Err(bad()),
        };
        let from = parts[1].parse().map_err(|_| bad())?;
        let to = parts[2].parse().map_err(|_| bad())?;
        let points = parts[3].parse().map_err(|_| bad())?;
        Grid::new(scale, from, to, points)
    }
}

/// Largest tracking error of a portfolio with volatility equal to the benchmark's
/// and correlation `ρ` with it: `√(2(1 − ρ))·σ(benchmark)`.
pub fn max_te_from_vol(benchmark_vol: f64, correlation: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&correlation) {
        return Err(AllocError::InvalidCorrelation(format!("{correlation} outside [-1, 1]")));
    }
    if !(benchmark_vol >= 0.0) {
        return Err(AllocError::InvalidInput("benchmark volatility must be non-negative".into()));
    }
    Ok((2.0 * (1.0 - correlation)).sqrt() * benchmark_vol)
}

/// Normalization of the score standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StdConvention {
    /// Divide by `n`.
    #[default]
    Population,
    /// Divide by `n − 1`.
    Sample,
}

/// Normalization of the mean absolute difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MadConvention {
    /// `Σᵢⱼ|sᵢ − sⱼ| / n²` over all ordered pairs, self-pairs included.
    #[default]
    AllPairs,
    /// `Σᵢ≠ⱼ|sᵢ − sⱼ| / (n(n − 1))` over distinct pairs.
    DistinctPairs,
}

/// Manager grades and the parameters of the tracking-error rule of thumb.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    /// Integer grades in `[−max_grade, max_grade]`.
    pub scores: Vec<i32>,
    /// Maximum tracking error `σ⁺`.
    pub sigma_plus: f64,
    /// Scaling constant (default 1/3).
    pub c: f64,
    /// Largest admissible absolute grade (default 3).
    pub max_grade: i32,
    /// Standard-deviation normalization.
    pub std_convention: StdConvention,
    /// Mean-absolute-difference normalization.
    pub mad_convention: MadConvention,
}

impl ScoreSet {
    /// Seven-grade scale with `c = 1/3` and the default conventions.
    pub fn new(scores: Vec<i32>, sigma_plus: f64) -> Self {
        ScoreSet {
            scores,
            sigma_plus,
            c: 1.0 / 3.0,
            max_grade: 3,
            std_convention: StdConvention::default(),
            mad_convention: MadConvention::default(),
        }
    }

    /// Checks the grade range, `n ≥ 2` and `σ⁺ ≥ 0`.
    pub fn validate(&self) -> Result<()> {
        if self.scores.len() < 2 {
            return Err(AllocError::InvalidInput("at least two scores are required".into()));
        }
        if let Some(s) = self.scores.iter().find(|s| s.abs() > self.max_grade) {
            return Err(AllocError::InvalidInput(format!("grade {s} outside ±{}", self.max_grade)));
        }
        if !(self.sigma_plus >= 0.0) || !(self.c >= 0.0) {
            return Err(AllocError::InvalidInput("σ⁺ and c must be non-negative".into()));
        }
        Ok(())
    }

    /// Standard deviation of the scores, from pairwise squared differences so that
    /// identical scores give exactly zero.
    pub fn dispersion_std(&self) -> f64 {
        let n = self.scores.len() as f64;
        let pair_sq: f64 = self.pairs().map(|d| d * d).sum();
        let denom = match self.std_convention {
            StdConvention::Population => 2.0 * n * n,
            StdConvention::Sample => 2.0 * n * (n - 1.0),
        };
        (pair_sq / denom).sqrt()
    }

    /// Mean absolute difference of the scores.
    pub fn dispersion_mad(&self) -> f64 {
        let n = self.scores.len() as f64;
        let total: f64 = self.pairs().map(f64::abs).sum();
        match self.mad_convention {
            MadConvention::AllPairs => total / (n * n),
            MadConvention::DistinctPairs => total / (n * (n - 1.0)),
        }
    }

    fn pairs(&self) -> impl Iterator<Item = f64> + '_ {
        self.scores
            .iter()
            .flat_map(move |&a| self.scores.iter().map(move |&b| f64::from(a - b)))
    }
}

/// Tracking-error level implied by the dispersion of the grades:
/// `c·((σ(s) + mad(s))/2)·σ⁺`.
pub fn te_level_rule(scores: &ScoreSet) -> Result<f64> {
    scores.validate()?;
    Ok(scores.c * 0.5 * (scores.dispersion_std() + scores.dispersion_mad()) * scores.sigma_plus)
}

//! JSON documents read and written by the commands. Every input type rejects
//! unknown keys; all numbers are decimals (0.05 means 5%).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use robo_alloc::mvo_core::ConstraintSet;
use robo_alloc::robo_pipeline::AnchorPenalties;
use robo_alloc::{Duals, SolveReport};

use crate::error::CliError;

/// Estimated moments (output of `estimate`, input of the other commands).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsFile {
    pub assets: Vec<String>,
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub periods: Option<usize>,
}

impl MomentsFile {
    pub fn n(&self) -> usize {
        self.mu.len()
    }

    /// Checks the shapes and returns `(μ, Σ)`.
    pub fn to_matrices(&self) -> Result<(DVector<f64>, DMatrix<f64>), CliError> {
        let n = self.n();
        if n == 0 {
            return Err(CliError::input("moments: no assets"));
        }
        if self.assets.len() != n {
            return Err(CliError::input(format!("moments: {} labels for {n} expected returns", self.assets.len())));
        }
        if self.sigma.len() != n || self.sigma.iter().any(|row| row.len() != n) {
            return Err(CliError::input(format!("moments: covariance must be {n}×{n}")));
        }
        let sigma = DMatrix::from_fn(n, n, |i, j| self.sigma[i][j]);
        Ok((DVector::from_vec(self.mu.clone()), sigma))
    }

    pub fn from_matrices(assets: Vec<String>, mu: &DVector<f64>, sigma: &DMatrix<f64>) -> Self {
        MomentsFile {
            assets,
            mu: mu.iter().copied().collect(),
            sigma: matrix_rows(sigma),
            scheme: None,
            periods: None,
        }
    }
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// A bound given either for every asset at once or asset by asset.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum BoundSpec {
    Uniform(f64),
    PerAsset(Vec<f64>),
}

impl BoundSpec {
    fn to_vector(&self, n: usize, what: &str) -> Result<DVector<f64>, CliError> {
        match self {
            BoundSpec::Uniform(v) => Ok(DVector::from_element(n, *v)),
            BoundSpec::PerAsset(v) if v.len() == n => Ok(DVector::from_vec(v.clone())),
            BoundSpec::PerAsset(v) => Err(CliError::input(format!("{what}: {} entries for {n} assets", v.len()))),
        }
    }
}

/// Linear rows `A x (= or ≥) b`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearRows {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl LinearRows {
    fn to_matrices(&self, n: usize, what: &str) -> Result<(DMatrix<f64>, DVector<f64>), CliError> {
        let m = self.a.len();
        if self.b.len() != m || self.a.iter().any(|row| row.len() != n) {
            return Err(CliError::input(format!("{what}: expected {} rows of {n} coefficients", self.b.len())));
        }
        Ok((DMatrix::from_fn(m, n, |i, j| self.a[i][j]), DVector::from_vec(self.b.clone())))
    }
}

/// Linear constraints; inequalities read `A x ≥ b`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintsSpec {
    #[serde(default)]
    pub budget: Option<f64>,
    #[serde(default)]
    pub lower: Option<BoundSpec>,
    #[serde(default)]
    pub upper: Option<BoundSpec>,
    #[serde(default)]
    pub eq: Option<LinearRows>,
    #[serde(default)]
    pub ineq: Option<LinearRows>,
}

impl ConstraintsSpec {
    pub fn to_constraint_set(&self, n: usize) -> Result<ConstraintSet, CliError> {
        let mut set = match self.budget {
            Some(b) => ConstraintSet::budget(b),
            None => ConstraintSet::none(),
        };
        let lower = self.lower.as_ref().map(|b| b.to_vector(n, "lower")).transpose()?;
        let upper = self.upper.as_ref().map(|b| b.to_vector(n, "upper")).transpose()?;
        set = set.with_bounds(lower, upper);
        if let Some(rows) = &self.eq {
            let (a, b) = rows.to_matrices(n, "eq")?;
            set = set.with_eq(a, b);
        }
        if let Some(rows) = &self.ineq {
            let (a, b) = rows.to_matrices(n, "ineq")?;
            set = set.with_ineq(a, b);
        }
        set.validate(n)?;
        Ok(set)
    }
}

/// Risk setting of a mean-variance problem.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MvoRisk {
    Gamma(f64),
    Volatility(f64),
    ExpectedReturn(f64),
}

/// Plain constrained mean-variance problem.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MvoProblem {
    #[serde(default)]
    pub r: f64,
    pub risk: MvoRisk,
    #[serde(default)]
    pub constraints: ConstraintsSpec,
}

/// Smooth objective of the rebalancing problem.
#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveSpec {
    MeanVariance,
    TrackingError,
}

/// Risk setting of the rebalancing problem.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum RoboRisk {
    Gamma(f64),
    TrackingError(f64),
}

/// Penalty magnitudes against one anchor (identity maps unless given).
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltiesSpec {
    #[serde(default)]
    pub l1: f64,
    #[serde(default)]
    pub l2: f64,
    #[serde(default)]
    pub l1_map: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub l2_map: Option<Vec<Vec<f64>>>,
}

fn square(rows: &[Vec<f64>], n: usize, what: &str) -> Result<DMatrix<f64>, CliError> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(CliError::input(format!("{what} must be {n}×{n}")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl PenaltiesSpec {
    pub fn to_penalties(&self, n: usize, what: &str) -> Result<AnchorPenalties, CliError> {
        let mut p = AnchorPenalties::new(self.l1, self.l2);
        p.l1_map = self.l1_map.as_ref().map(|m| square(m, n, &format!("{what}.l1_map"))).transpose()?;
        p.l2_map = self.l2_map.as_ref().map(|m| square(m, n, &format!("{what}.l2_map"))).transpose()?;
        Ok(p)
    }
}

/// Rebalancing problem around a strategic and a current allocation.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoboProblem {
    #[serde(default)]
    pub r: f64,
    pub strategic: Vec<f64>,
    #[serde(default)]
    pub current: Option<Vec<f64>>,
    pub objective: ObjectiveSpec,
    pub risk: RoboRisk,
    #[serde(default)]
    pub strategic_penalties: PenaltiesSpec,
    #[serde(default)]
    pub current_penalties: PenaltiesSpec,
    /// Extra constraints on top of the fully-invested long-only box.
    #[serde(default)]
    pub constraints: ConstraintsSpec,
    #[serde(default)]
    pub max_iter: Option<usize>,
}

/// Problem accepted by `optimize`.
#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemFile {
    Mvo(MvoProblem),
    Robo(RoboProblem),
}

/// Grade views accepted by `views`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewsFile {
    pub strategic: Vec<f64>,
    #[serde(default)]
    pub r: f64,
    pub sharpe: f64,
    pub scores: Vec<i32>,
    pub tau: f64,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub grade_count: Option<usize>,
    #[serde(default)]
    pub use_sigma: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DualsOut {
    pub eq: Vec<f64>,
    pub ineq: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl From<&Duals> for DualsOut {
    fn from(d: &Duals) -> Self {
        DualsOut {
            eq: d.eq.iter().copied().collect(),
            ineq: d.ineq.iter().copied().collect(),
            lower: d.lower.iter().copied().collect(),
            upper: d.upper.iter().copied().collect(),
        }
    }
}

/// Solver report written by `optimize`.
#[derive(Debug, Clone, Serialize)]
pub struct ReportFile {
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub assets: Vec<String>,
    pub weights: Vec<f64>,
    pub objective: Option<f64>,
    pub gamma: Option<f64>,
    pub expected_return: Option<f64>,
    pub volatility: Option<f64>,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duals: Option<DualsOut>,
    pub notes: Vec<String>,
}

impl ReportFile {
    pub fn from_report(assets: Vec<String>, report: &SolveReport, expected_return: f64, volatility: f64) -> Self {
        ReportFile {
            status: report.status.as_str().to_string(),
            error: None,
            assets,
            weights: report.weights.iter().copied().collect(),
            objective: Some(report.objective),
            gamma: report.gamma,
            expected_return: Some(expected_return),
            volatility: Some(volatility),
            iterations: report.iterations,
            primal_residual: report.primal_residual,
            dual_residual: report.dual_residual,
            duals: report.duals.as_ref().map(DualsOut::from),
            notes: report.notes.clone(),
        }
    }

    pub fn failure(assets: Vec<String>, message: &str) -> Self {
        ReportFile {
            status: "failed".into(),
            error: Some(message.to_string()),
            assets,
            weights: Vec::new(),
            objective: None,
            gamma: None,
            expected_return: None,
            volatility: None,
            iterations: 0,
            primal_residual: f64::NAN,
            dual_residual: f64::NAN,
            duals: None,
            notes: Vec::new(),
        }
    }
}

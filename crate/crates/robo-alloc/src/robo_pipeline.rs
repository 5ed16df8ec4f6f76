//! The full rebalancing program: a mean-variance or tracking-error objective with
//! L1/L2 penalties anchored at the strategic and at the current portfolio, solved by
//! QP when no L1 term is active and by ADMM otherwise, plus regularization paths.
//!
//! Penalty magnitudes are stored as raw decimals. In practice L2 parameters are
//! of the order of tens of percent (e.g. `0.25`) while L1 parameters are of the order
//! of basis points (e.g. `0.0005`).

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::admm_engine::{self, AdmmConstraints, AdmmParams, AdmmState, Block, MixedProblem, Quadratic};
use crate::error::{AllocError, Result};
use crate::mvo_core::{bisect_gamma, te_transform, tracking_error, Calibration, ConstraintSet, MvoInputs, CALIBRATION_TOL};
use crate::qp_solver;
use crate::regularizers::{PenaltyKind, PenaltySpec};
use crate::report::{SolveReport, SolveStatus};

/// Smooth part of the rebalancing objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// `½xᵀΣx − γxᵀ(μ − r·1)`.
    MeanVariance,
    /// `½(x − x̃)ᵀΣ(x − x̃) − γ(x − x̃)ᵀ(μ − r·1)` around the strategic portfolio `x̃`.
    TrackingError,
}

/// How the risk tolerance is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RiskSetting {
    /// Fixed `γ ≥ 0`.
    Gamma(f64),
    /// γ calibrated so that the tracking error against `x̃` equals the target.
    TrackingErrorTarget(f64),
}

/// L1 and L2 penalties measured against one anchor portfolio.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnchorPenalties {
    /// L1 magnitude `ϱ₁`.
    pub l1: f64,
    /// L1 map `Γ₁` (identity when `None`).
    pub l1_map: Option<DMatrix<f64>>,
    /// L2 magnitude `ϱ₂`.
    pub l2: f64,
    /// L2 map `Γ₂` (identity when `None`).
    pub l2_map: Option<DMatrix<f64>>,
}

impl AnchorPenalties {
    /// Identity-map penalties with the given magnitudes.
    pub fn new(l1: f64, l2: f64) -> Self {
        AnchorPenalties { l1, l2, ..Default::default() }
    }

    fn specs(&self, anchor: &DVector<f64>) -> Result<(PenaltySpec, PenaltySpec)> {
        let n = anchor.len();
        let eye = || DMatrix::identity(n, n);
        let l1 = PenaltySpec::new(PenaltyKind::L1, self.l1, self.l1_map.clone().unwrap_or_else(eye), anchor.clone())?;
        let l2 = PenaltySpec::new(PenaltyKind::L2, self.l2, self.l2_map.clone().unwrap_or_else(eye), anchor.clone())?;
        Ok((l1, l2))
    }
}

/// Configuration of one rebalancing decision.
#[derive(Debug, Clone, PartialEq)]
pub struct RoboConfig {
    /// Strategic allocation `x̃` (on the simplex).
    pub strategic: DVector<f64>,
    /// Current allocation `x_t` (on the simplex).
    pub current: DVector<f64>,
    /// Smooth objective.
    pub objective: Objective,
    /// Risk tolerance or tracking-error target.
    pub risk: RiskSetting,
    /// Penalties against the strategic allocation.
    pub strategic_penalties: AnchorPenalties,
    /// Penalties against the current allocation (the L1 term controls turnover).
    pub current_penalties: AnchorPenalties,
    /// Additional constraints, intersected with `1ᵀx = 1` and `0 ≤ x ≤ 1`.
    pub extra: ConstraintSet,
    /// ADMM parameters used when an L1 penalty is active.
    pub admm: AdmmParams,
}

impl RoboConfig {
    /// Configuration without penalties or extra constraints.
    pub fn new(strategic: DVector<f64>, current: DVector<f64>, objective: Objective, risk: RiskSetting) -> Self {
        RoboConfig {
            strategic,
            current,
            objective,
            risk,
            strategic_penalties: AnchorPenalties::default(),
            current_penalties: AnchorPenalties::default(),
            extra: ConstraintSet::none(),
            admm: AdmmParams::default(),
        }
    }

    /// Number of assets.
    pub fn n(&self) -> usize {
        self.strategic.len()
    }

    /// Checks sizes, that both anchors are on the simplex and that penalties are
    /// non-negative.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.current.len() != n {
            return Err(AllocError::DimensionMismatch("strategic and current portfolios differ in size".into()));
        }
        for (name, x) in [("strategic", &self.strategic), ("current", &self.current)] {
            if (x.sum() - 1.0).abs() > 1e-9 || x.iter().any(|v| !(*v >= -1e-12 && *v <= 1.0 + 1e-12)) {
                return Err(AllocError::InvalidInput(format!("{name} portfolio is not on the simplex")));
            }
        }
        let pens = [&self.strategic_penalties, &self.current_penalties];
        if pens.iter().any(|p| !(p.l1 >= 0.0) || !(p.l2 >= 0.0)) {
            return Err(AllocError::InvalidInput("penalty magnitudes must be non-negative".into()));
        }
        match self.risk {
            RiskSetting::Gamma(g) if !(g >= 0.0) || !g.is_finite() => {
                return Err(AllocError::InvalidInput(format!("gamma {g} must be finite and non-negative")))
            }
            RiskSetting::TrackingErrorTarget(te) if !(te >= 0.0) => {
                return Err(AllocError::InvalidInput(format!("tracking-error target {te} must be non-negative")))
            }
            _ => {}
        }
        if let Some(b) = self.extra.budget {
            if (b - 1.0).abs() > 1e-12 {
                return Err(AllocError::InvalidInput("the budget is fixed to one".into()));
            }
        }
        self.extra.validate(n)?;
        self.admm.validate()
    }

    /// Full constraint set: budget one, `max(0, l) ≤ x ≤ min(1, u)` and extra rows.
    pub fn constraint_set(&self) -> ConstraintSet {
        let n = self.n();
        let lower = DVector::from_fn(n, |i, _| self.extra.lower.as_ref().map_or(0.0, |l| l[i].max(0.0)));
        let upper = DVector::from_fn(n, |i, _| self.extra.upper.as_ref().map_or(1.0, |u| u[i].min(1.0)));
        ConstraintSet { budget: Some(1.0), lower: Some(lower), upper: Some(upper), eq: self.extra.eq.clone(), ineq: self.extra.ineq.clone() }
    }

    /// Smooth objective at risk tolerance `γ` (the tracking-error form goes through the
    /// equivalent shifted expected returns when `γ > 0`).
    pub fn quadratic(&self, inputs: &MvoInputs, gamma: f64) -> Result<Quadratic> {
        if inputs.n() != self.n() {
            return Err(AllocError::DimensionMismatch("market inputs and portfolios differ in size".into()));
        }
        match self.objective {
            Objective::MeanVariance => Ok(Quadratic::from_mvo(inputs, gamma)),
            Objective::TrackingError => {
                let b = &self.strategic;
                let mut quad = if gamma > 0.0 {
                    Quadratic::from_mvo(&te_transform(inputs, b, gamma)?, gamma)
                } else {
                    Quadratic { p: inputs.sigma.clone(), q: -(&inputs.sigma * b), constant: 0.0 }
                };
                // Constant making the value equal to ½σ²(x|x̃) − γ(x − x̃)ᵀ(μ − r·1).
                quad.constant = 0.5 * b.dot(&(&inputs.sigma * b)) + gamma * b.dot(&inputs.excess_mu());
                Ok(quad)
            }
        }
    }

    /// The penalized problem at risk tolerance `γ`.
    pub fn problem(&self, inputs: &MvoInputs, gamma: f64) -> Result<PenalizedProblem> {
        self.validate()?;
        let (s1, s2) = self.strategic_penalties.specs(&self.strategic)?;
        let (c1, c2) = self.current_penalties.specs(&self.current)?;
        Ok(PenalizedProblem {
            quad: self.quadratic(inputs, gamma)?,
            constraints: self.constraint_set(),
            l1: vec![s1, c1],
            l2: vec![s2, c2],
            admm: self.admm.clone(),
        })
    }
}

/// `min quad(x) + Σ L1 penalties + Σ L2 penalties` over a linear constraint set.
#[derive(Debug, Clone, PartialEq)]
pub struct PenalizedProblem {
    /// Smooth objective.
    pub quad: Quadratic,
    /// Linear constraints.
    pub constraints: ConstraintSet,
    /// L1 penalties (inactive when `ϱ = 0`).
    pub l1: Vec<PenaltySpec>,
    /// L2 penalties, folded into the quadratic.
    pub l2: Vec<PenaltySpec>,
    /// ADMM parameters used when an L1 penalty is active.
    pub admm: AdmmParams,
}

/// Solution of a [`PenalizedProblem`] with the ADMM iterates, if ADMM was used.
#[derive(Debug, Clone, PartialEq)]
pub struct PenalizedSolution {
    /// Report; `objective` includes every penalty.
    pub report: SolveReport,
    /// Final ADMM iterates (for warm starts).
    pub state: Option<AdmmState>,
}

impl PenalizedProblem {
    /// Number of assets.
    pub fn n(&self) -> usize {
        self.quad.dim()
    }

    /// Objective value with every penalty.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        self.quad.value(x) + self.l1.iter().chain(&self.l2).map(|p| p.value(x)).sum::<f64>()
    }

    /// Solves the problem: exactly by QP when every L1 magnitude is zero, by ADMM
    /// (one stacked splitting variable for all L1 terms) otherwise.
    pub fn solve(&self, warm: Option<&AdmmState>) -> Result<PenalizedSolution> {
        let mut quad = self.quad.clone();
        for pen in &self.l2 {
            quad = quad.with_l2(Some(pen))?;
        }
        let active: Vec<&PenaltySpec> = self.l1.iter().filter(|p| p.rho > 0.0).collect();
        if active.is_empty() {
            let mut report = qp_solver::solve_qp(&self.constraints.to_qp(quad.p.clone(), quad.q.clone()))?;
            report.objective = self.objective(&report.weights);
            return Ok(PenalizedSolution { report, state: None });
        }
        let blocks = active.into_iter().map(Block::penalty).collect::<Result<Vec<_>>>()?;
        let constraints = AdmmConstraints::from_constraint_set(&self.constraints, self.n())?;
        let problem = MixedProblem::new(quad, &constraints, blocks)?;
        let sol = admm_engine::solve_mixed(&problem, &self.admm, warm)?;
        let mut report = sol.report;
        report.objective = self.objective(&report.weights);
        Ok(PenalizedSolution { report, state: Some(sol.state) })
    }
}

/// Solves the rebalancing problem. With a tracking-error target, γ is calibrated
/// first (see [`te_target_to_gamma`]); the report carries the γ used.
pub fn rebalance(config: &RoboConfig, inputs: &MvoInputs) -> Result<SolveReport> {
    config.validate()?;
    match config.risk {
        RiskSetting::Gamma(gamma) => solve_at_gamma(config, inputs, gamma),
        RiskSetting::TrackingErrorTarget(te) => Ok(te_target_to_gamma(config, inputs, te)?.report),
    }
}

fn solve_at_gamma(config: &RoboConfig, inputs: &MvoInputs, gamma: f64) -> Result<SolveReport> {
    let mut report = config.problem(inputs, gamma)?.solve(None)?.report;
    report.gamma = Some(gamma);
    Ok(report)
}

/// Calibrates γ by bisection so that the tracking error `σ(x*(γ)|x̃)` of the
/// rebalanced portfolio equals `te_target` (to 10⁻⁶).
pub fn te_target_to_gamma(config: &RoboConfig, inputs: &MvoInputs, te_target: f64) -> Result<Calibration> {
    config.validate()?;
    if !(te_target >= 0.0) {
        return Err(AllocError::InvalidInput("tracking-error target must be non-negative".into()));
    }
    bisect_gamma(
        |gamma| {
            let report = solve_at_gamma(config, inputs, gamma)?;
            if !report.status.is_converged() {
                return Err(AllocError::MaxIterations(report.iterations));
            }
            Ok((tracking_error(&report.weights, &config.strategic, &inputs.sigma), report))
        },
        te_target,
        CALIBRATION_TOL,
    )
}

/// Parameter of a [`PenalizedProblem`] swept along a path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathParam {
    /// Magnitude of the L1 penalty with this index.
    L1(usize),
    /// Magnitude of the L2 penalty with this index.
    L2(usize),
}

/// Penalty of a [`RoboConfig`] swept along a path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoboParam {
    /// L1 penalty against the strategic allocation.
    StrategicL1,
    /// L2 penalty against the strategic allocation.
    StrategicL2,
    /// L1 (turnover) penalty against the current allocation.
    CurrentL1,
    /// L2 penalty against the current allocation.
    CurrentL2,
}

impl RoboParam {
    /// Column label used in path tables.
    pub fn label(self) -> &'static str {
        match self {
            RoboParam::StrategicL1 => "strategic_l1",
            RoboParam::StrategicL2 => "strategic_l2",
            RoboParam::CurrentL1 => "current_l1",
            RoboParam::CurrentL2 => "current_l2",
        }
    }

    fn path_param(self) -> PathParam {
        match self {
            RoboParam::StrategicL1 => PathParam::L1(0),
            RoboParam::CurrentL1 => PathParam::L1(1),
            RoboParam::StrategicL2 => PathParam::L2(0),
            RoboParam::CurrentL2 => PathParam::L2(1),
        }
    }
}

/// Solutions along a parameter grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathTable {
    /// Name of the swept parameter.
    pub param: String,
    /// Asset labels.
    pub assets: Vec<String>,
    /// Grid values.
    pub grid: Vec<f64>,
    /// One row of weights per grid value (NaN where the solve failed).
    pub weights: DMatrix<f64>,
    /// Objective per grid value (NaN where the solve failed).
    pub objective: Vec<f64>,
    /// Status label per grid value (`converged`, `max_iter`, or `error: …`).
    pub status: Vec<String>,
}

impl PathTable {
    /// Writes the table as CSV with header `param,<assets>,objective,status`.
    pub fn to_csv<W: Write>(&self, out: W) -> Result<()> {
        let io = |e: csv::Error| AllocError::InvalidInput(format!("cannot write path table: {e}"));
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![self.param.clone()];
        header.extend(self.assets.iter().cloned());
        header.extend(["objective".to_string(), "status".to_string()]);
        w.write_record(&header).map_err(io)?;
        for (i, g) in self.grid.iter().enumerate() {
            let mut row = vec![format_num(*g)];
            row.extend(self.weights.row(i).iter().map(|v| format_num(*v)));
            row.push(format_num(self.objective[i]));
            row.push(self.status[i].clone());
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(|e| AllocError::InvalidInput(format!("cannot write path table: {e}")))?;
        Ok(())
    }

    /// Rows whose solve converged.
    pub fn converged_rows(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.grid.len()).filter(|&i| self.status[i] == SolveStatus::Converged.as_str())
    }
}

fn format_num(v: f64) -> String {
    if v.is_nan() {
        String::from("NaN")
    } else {
        format!("{v:.12e}")
    }
}

/// Default asset labels `x1, …, xn`.
pub fn default_asset_labels(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("x{i}")).collect()
}

/// Solves `problem` for every grid value of `param`, warm-starting each ADMM solve
/// from the previous grid point (reset after a failure). Failures are recorded in
/// their row and the sweep continues.
pub fn penalty_path(problem: &PenalizedProblem, param: PathParam, grid: &[f64], label: &str) -> Result<PathTable> {
    if grid.is_empty() {
        return Err(AllocError::GridEmpty);
    }
    if grid.windows(2).any(|w| !(w[0] <= w[1])) || grid.iter().any(|g| !(*g >= 0.0)) {
        return Err(AllocError::InvalidInput("path grid must be non-negative and sorted".into()));
    }
    let count = match param {
        PathParam::L1(_) => problem.l1.len(),
        PathParam::L2(_) => problem.l2.len(),
    };
    let index = match param {
        PathParam::L1(i) | PathParam::L2(i) => i,
    };
    if index >= count {
        return Err(AllocError::InvalidInput(format!("no penalty with index {index}")));
    }
    let n = problem.n();
    let mut weights = DMatrix::from_element(grid.len(), n, f64::NAN);
    let mut objective = vec![f64::NAN; grid.len()];
    let mut status = Vec::with_capacity(grid.len());
    let mut warm: Option<AdmmState> = None;
    let mut current = problem.clone();
    for (row, &value) in grid.iter().enumerate() {
        match param {
            PathParam::L1(i) => current.l1[i].rho = value,
            PathParam::L2(i) => current.l2[i].rho = value,
        }
        match current.solve(warm.as_ref()) {
            Ok(sol) => {
                weights.set_row(row, &sol.report.weights.transpose());
                objective[row] = sol.report.objective;
                status.push(sol.report.status.as_str().to_string());
                warm = if sol.report.status.is_converged() { sol.state } else { None };
            }
            Err(e) => {
                status.push(format!("error: {e}"));
                warm = None;
            }
        }
    }
    Ok(PathTable { param: label.to_string(), assets: default_asset_labels(n), grid: grid.to_vec(), weights, objective, status })
}

/// Regularization path of a rebalancing configuration along one of its penalties,
/// at the configured γ (or the γ calibrated once on the configuration as given).
pub fn regularization_path(config: &RoboConfig, inputs: &MvoInputs, param: RoboParam, grid: &[f64]) -> Result<PathTable> {
    config.validate()?;
    let gamma = match config.risk {
        RiskSetting::Gamma(g) => g,
        RiskSetting::TrackingErrorTarget(te) => te_target_to_gamma(config, inputs, te)?.gamma,
    };
    penalty_path(&config.problem(inputs, gamma)?, param.path_param(), grid, param.label())
}

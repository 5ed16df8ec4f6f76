//! Solver output shared by the QP, ADMM and mean-variance front-ends.

use nalgebra::DVector;

/// Termination status of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// Optimality (or the residual tolerances) reached.
    Converged,
    /// Iteration budget exhausted before the tolerances were met.
    MaxIter,
    /// Residuals exploded.
    Diverged,
}

impl SolveStatus {
    /// Lower-case label used in reports and CSV files.
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIter => "max_iter",
            SolveStatus::Diverged => "diverged",
        }
    }

    /// `true` for [`SolveStatus::Converged`].
    pub fn is_converged(self) -> bool {
        self == SolveStatus::Converged
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Lagrange multipliers of a constrained quadratic program
/// `min ½xᵀQx + cᵀx` subject to `A_eq x = b_eq`, `A_in x ≥ b_in`, `l ≤ x ≤ u`.
///
/// Stationarity reads `Qx + c + A_eqᵀ eq − A_inᵀ ineq − lower + upper = 0`, with
/// `ineq`, `lower` and `upper` non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct Duals {
    /// Multipliers of the equality rows (free sign).
    pub eq: DVector<f64>,
    /// Multipliers of the `A_in x ≥ b_in` rows.
    pub ineq: DVector<f64>,
    /// Multipliers of the lower bounds.
    pub lower: DVector<f64>,
    /// Multipliers of the upper bounds.
    pub upper: DVector<f64>,
}

impl Duals {
    /// Zero multipliers of the given sizes.
    pub fn zeros(n_eq: usize, n_ineq: usize, n: usize) -> Self {
        Duals {
            eq: DVector::zeros(n_eq),
            ineq: DVector::zeros(n_ineq),
            lower: DVector::zeros(n),
            upper: DVector::zeros(n),
        }
    }
}

/// Result of an optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    /// Optimal (or last) portfolio weights.
    pub weights: DVector<f64>,
    /// Objective value at `weights`.
    pub objective: f64,
    /// Termination status.
    pub status: SolveStatus,
    /// Number of iterations performed.
    pub iterations: usize,
    /// Final primal residual norm (0 for direct solves).
    pub primal_residual: f64,
    /// Final dual residual norm (0 for direct solves).
    pub dual_residual: f64,
    /// Lagrange multipliers, when the solver produces them.
    pub duals: Option<Duals>,
    /// Risk-tolerance parameter the solve was performed with, if any.
    pub gamma: Option<f64>,
    /// Free-form diagnostics (e.g. regularization applied to a singular Hessian).
    pub notes: Vec<String>,
}

impl SolveReport {
    /// A converged report from a direct (non-iterative) solve.
    pub fn direct(weights: DVector<f64>, objective: f64) -> Self {
        SolveReport {
            weights,
            objective,
            status: SolveStatus::Converged,
            iterations: 0,
            primal_residual: 0.0,
            dual_residual: 0.0,
            duals: None,
            gamma: None,
            notes: Vec::new(),
        }
    }
}

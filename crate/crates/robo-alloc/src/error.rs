//! Error type shared by every module of the engine.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, AllocError>;

/// Failure modes of estimation, optimization and calibration routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum AllocError {
    /// Two inputs that must agree in size do not.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    /// An input violates a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// A return panel has fewer than two observations or is otherwise unusable.
    #[error("degenerate panel: {0}")]
    DegeneratePanel(String),
    /// A matrix that must be symmetric is not.
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    /// A covariance matrix has an eigenvalue below the PSD tolerance.
    #[error("matrix is not positive semi-definite (min eigenvalue {0:e})")]
    NotPsd(f64),
    /// A matrix that must be positive definite is not.
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    /// A matrix has no usable singular values.
    #[error("matrix is singular")]
    SingularMatrix,
    /// A covariance matrix is too ill-conditioned to invert.
    #[error("covariance matrix is singular or ill-conditioned")]
    SingularCovariance,
    /// A block KKT system could not be solved.
    #[error("KKT system is singular")]
    SingularKkt,
    /// The feasible set is empty.
    #[error("infeasible constraint set: {0}")]
    Infeasible(String),
    /// The objective is unbounded below on the feasible set.
    #[error("problem is unbounded")]
    Unbounded,
    /// An iterative solver exhausted its iteration budget.
    #[error("maximum number of iterations ({0}) reached")]
    MaxIterations(usize),
    /// Iterates or residuals blew up.
    #[error("numerical divergence: {0}")]
    NumericalDivergence(String),
    /// A non-convex search failed from every starting point.
    #[error("no convergence: {0}")]
    NoConvergence(String),
    /// A calibration target cannot be reached.
    #[error("target unreachable: {0}")]
    TargetUnreachable(String),
    /// An asset is (numerically) a linear combination of the others.
    #[error("asset {0} is perfectly explained by the other assets")]
    PerfectCollinearity(usize),
    /// A correlation parameter is outside its admissible range.
    #[error("invalid correlation: {0}")]
    InvalidCorrelation(String),
    /// A solution was expected to carry Lagrange multipliers.
    #[error("solution carries no dual variables")]
    MissingDuals,
    /// A reference portfolio has zero variance.
    #[error("portfolio has zero volatility")]
    ZeroVolatilityPortfolio,
    /// A risk-aversion parameter of zero was supplied where it divides.
    #[error("risk-tolerance parameter must be non-zero")]
    ZeroGamma,
    /// A hard-threshold filter removed every singular value.
    #[error("spectral filter removed every singular value")]
    AllSingularValuesFiltered,
    /// A proximal operator was requested for an exponent below one.
    #[error("exponent p = {0} does not define a convex penalty")]
    NonConvexOrder(f64),
    /// A projection target set is empty.
    #[error("empty set: {0}")]
    EmptySet(String),
    /// An intersection of sets is empty (or could not be found).
    #[error("empty intersection: {0}")]
    EmptyIntersection(String),
    /// The L1 split of the augmented QP needs a non-negative penalty matrix.
    #[error("penalty matrix has negative entries; use the ADMM route")]
    NegativeGammaEntries,
    /// A leave-one-out denominator vanished.
    #[error("observation {0} has leverage one")]
    LeverageSingularity(usize),
    /// The penalty matrix of a ridge regression is singular.
    #[error("penalty matrix is singular")]
    SingularGamma,
    /// A parameter grid has no points.
    #[error("grid is empty")]
    GridEmpty,
    /// The covariance of the views is singular.
    #[error("view covariance is singular")]
    SingularViewCovariance,
}

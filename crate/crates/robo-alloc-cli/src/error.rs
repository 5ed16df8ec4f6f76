//! Command failures and their exit codes.

use robo_alloc::AllocError;

/// A failed command.
#[derive(Debug)]
pub enum CliError {
    /// Invalid input, I/O problem or infeasible problem (exit code 1).
    Input(String),
    /// The solver did not converge (exit code 2).
    Solver(String),
}

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::Solver(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Solver(m) => m,
        }
    }
}

/// Solver breakdowns map to exit code 2, everything else to exit code 1.
pub fn is_solver_failure(err: &AllocError) -> bool {
    matches!(err, AllocError::MaxIterations(_) | AllocError::NoConvergence(_) | AllocError::NumericalDivergence(_))
}

impl From<AllocError> for CliError {
    fn from(err: AllocError) -> Self {
        if is_solver_failure(&err) {
            CliError::Solver(err.to_string())
        } else {
            CliError::Input(err.to_string())
        }
    }
}

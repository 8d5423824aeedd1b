use thiserror::Error;

/// Errors raised by the solver stack.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, grids or field kinds do not line up.
    #[error("structural error: {0}")]
    Structural(String),

    /// An operator was called on a field it cannot handle (e.g. a Laplacian
    /// on a field without a boundary rule).
    #[error("usage error: {0}")]
    Usage(String),

    /// Neumann problem right-hand side does not have zero mean.
    #[error("incompatible Neumann data: |mean| = {mean:.3e} exceeds {limit:.3e}")]
    Compatibility { mean: f64, limit: f64 },

    /// Iterative solver ran out of iterations.
    #[error("{context}: no convergence after {iterations} iterations (relative residual {residual:.3e})")]
    Convergence {
        context: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// Advective CFL restriction violated.
    #[error("CFL violation: dt*max|v|/h = {cfl:.3e} > {limit}")]
    Cfl { cfl: f64, limit: f64 },

    /// A time step failed; wraps the underlying cause.
    #[error("{module} step {index}: {source}")]
    Step {
        module: &'static str,
        index: usize,
        #[source]
        source: Box<Error>,
    },

    /// A non-finite value appeared.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// Armijo backtracking could not find a decrease.
    #[error("line search stagnated at iteration {iteration} (J = {cost:.6e}, |grad| = {grad_norm:.3e})")]
    Stagnation {
        iteration: usize,
        cost: f64,
        grad_norm: f64,
    },

    #[error("snapshot format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at_step(self, module: &'static str, index: usize) -> Self {
        Error::Step {
            module,
            index,
            source: Box::new(self),
        }
    }

    /// True when the root cause is an iterative-solver failure.
    pub fn is_convergence(&self) -> bool {
        match self {
            Error::Convergence { .. } | Error::Stagnation { .. } => true,
            Error::Step { source, .. } => source.is_convergence(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

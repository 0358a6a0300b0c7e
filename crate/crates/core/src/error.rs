use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Inconsistent or physically invalid input data.
    #[error("data error: {0}")]
    Data(String),

    /// The network topology cannot be solved (isolated bus, floating island, ...).
    #[error("topology error: {0}")]
    Topology(String),

    /// An iterative solver ran out of iterations.
    #[error("{solver} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    /// Dynamic initialization produced an infeasible or inconsistent state.
    #[error("initialization error: {0}")]
    Init(String),

    /// An invalid event or event sequence.
    #[error("event error: {0}")]
    Event(String),

    #[error("scenario error: {0}")]
    Scenario(String),
}

impl Error {
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn topology(msg: impl Into<String>) -> Self {
        Error::Topology(msg.into())
    }

    pub fn init(msg: impl Into<String>) -> Self {
        Error::Init(msg.into())
    }

    pub fn event(msg: impl Into<String>) -> Self {
        Error::Event(msg.into())
    }

    pub fn scenario(msg: impl Into<String>) -> Self {
        Error::Scenario(msg.into())
    }

    /// True for errors raised by numerical solvers rather than by bad input.
    pub fn is_solver_failure(&self) -> bool {
        matches!(self, Error::NonConvergence { .. } | Error::Singular(_))
    }
}

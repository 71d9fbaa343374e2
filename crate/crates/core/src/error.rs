use thiserror::Error;

/// Errors produced by solvers, evaluators and pipeline stages.
#[derive(Debug, Error)]
pub enum GameError {
    #[error("failed to parse game file: {0}")]
    Parse(String),

    #[error("invalid game: {0}")]
    Invalid(String),

    #[error("history tree exceeds cap: {count} histories (cap {cap})")]
    CapExceeded { count: usize, cap: usize },

    #[error("strategy undefined at reachable history {key}")]
    IncompleteStrategy { key: String },

    #[error("Martin function undefined at reachable extension of {key}")]
    IncompleteMartin { key: String },

    #[error("{what} is unsupported for payoff class {class}")]
    Unsupported { class: String, what: String },

    #[error("solver failed at {context}: best residual {best_residual:.3e}")]
    SolverFailure { context: String, best_residual: f64 },

    #[error("assertion failed: {0}")]
    Assertion(String),
}

pub type Result<T> = std::result::Result<T, GameError>;

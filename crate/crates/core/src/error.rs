use thiserror::Error;

/// Errors produced by the optimization engine and its building blocks.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("a ring needs at least 3 agents, got {0}")]
    RingTooSmall(usize),

    #[error("max_degree must be at least 2 to contain the ring, got {0}")]
    MaxDegreeTooSmall(usize),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("initial gain for neighbor {neighbor} must be positive, got {value}")]
    NonPositiveGain { neighbor: usize, value: f64 },

    #[error("agent {0} has an empty neighborhood")]
    EmptyNeighborhood(usize),

    #[error("agent {neighbor} is not in the neighborhood of agent {agent}")]
    NotANeighbor { agent: usize, neighbor: usize },

    #[error("agent {agent} is missing a payload from neighbor {neighbor}")]
    MissingPayload { agent: usize, neighbor: usize },

    #[error("exact minimization requires a quadratic objective (agent {0})")]
    ExactModeUnsupported(usize),

    #[error("agent {0} has no previous iterate, residues are undefined before the first round")]
    NoResidues(usize),

    #[error("matrix is not positive semidefinite (smallest eigenvalue {0:e})")]
    NotPositiveSemidefinite(f64),

    #[error("centralized solver did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    OracleNotConverged { iterations: usize, grad_norm: f64 },

    #[error("constraint system is infeasible (KKT residual {0:e})")]
    Infeasible(f64),

    #[error("KKT system is degenerate: the primal minimizer is not unique")]
    Degenerate,

    #[error("communication graph is not connected")]
    Disconnected,

    #[error("constraint blocks do not conform to the communication graph")]
    NonConforming,

    #[error("estimate subproblem of agent {0} is singular")]
    SingularSubproblem(usize),

    #[error("non-finite value detected in round {0}")]
    Diverged(usize),

    #[error("no oracle solution is available")]
    MissingOracle,

    #[error("invalid value for `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("malformed trace at line {line}: {reason}")]
    MalformedTrace { line: usize, reason: String },

    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

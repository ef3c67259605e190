use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("unknown problem `{0}`")]
    UnknownProblem(String),
    #[error("`{key}` is not a tunable of `{problem}` (tunables: {allowed})")]
    NotTunable {
        problem: String,
        key: String,
        allowed: String,
    },
    #[error("bad value for `{key}`: {reason}")]
    BadOverride { key: String, reason: String },
    #[error("invalid problem data: {0}")]
    Invalid(String),
    #[error("trajectory and control grids differ")]
    GridMismatch,
    #[error("time grid is not strictly increasing")]
    NonMonotoneGrid,
}

#[derive(Debug, Error)]
pub enum LpError {
    #[error("non-finite LP data")]
    NonFinite,
    #[error("simplex iteration limit ({0}) reached")]
    IterationLimit(usize),
    #[error("empty generator sample")]
    Empty,
}

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("empty control sample")]
    EmptySample,
    #[error("conjugate needs a structured form or a generator sample")]
    NoRepresentation,
    #[error("projection did not converge within {0} sweeps")]
    ProjectionStalled(usize),
    #[error(transparent)]
    Lp(#[from] LpError),
}

#[derive(Debug, Error)]
pub enum DiscretizeError {
    #[error("grid needs at least one step")]
    NoSteps,
    #[error("empty horizon [{0}, {1}]")]
    EmptyHorizon(f64, f64),
    #[error("node list must be strictly increasing with at least two nodes")]
    BadNodes,
    #[error("convexity condition for the relaxed program fails ({0}); pass allow_nonconvex to proceed")]
    Nonconvex(String),
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("certified infeasible: {0}")]
    Infeasible(String),
    #[error("invalid solver options: {0}")]
    BadOptions(String),
    #[error(transparent)]
    Transform(#[from] TransformError),
}

#[derive(Debug, Error)]
pub enum DecomposeError {
    #[error("velocity lies outside the convexified control set (residual {0:e})")]
    Infeasible(f64),
    #[error("decomposition needs {0} atoms, above the cap {1}")]
    TooManyAtoms(usize, usize),
    #[error("no sampled control reproduces atom velocity (residual {0:e})")]
    NoControl(f64),
    #[error(transparent)]
    Transform(#[from] TransformError),
}

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error("substeps per piece must be at least 1")]
    NoSubsteps,
    #[error("non-finite state at s = {0}")]
    NonFinite(f64),
    #[error("minimum-residual mode needs a control-independent stage cost")]
    ControlDependentCost,
    #[error("breakpoints must be strictly increasing")]
    BadBreakpoints,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("grid oracle supports state dimension up to 3, got {0}")]
    Dimension(usize),
    #[error("box too small: reachable tube [{lo:?}, {hi:?}] leaves it")]
    BoxTooSmall { lo: Vec<f64>, hi: Vec<f64> },
    #[error("enumeration budget exceeded: {0} sequences (limit 1e7, K <= 8)")]
    Budget(f64),
    #[error("bad oracle input: {0}")]
    Invalid(String),
}

/// Crate-wide error.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Discretize(#[from] DiscretizeError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Decompose(#[from] DecomposeError),
    #[error(transparent)]
    Rollout(#[from] RolloutError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<LpError> for Error {
    fn from(e: LpError) -> Self {
        Error::Transform(TransformError::Lp(e))
    }
}

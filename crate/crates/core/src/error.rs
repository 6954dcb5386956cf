use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {left} vs {right}")]
    GridMismatch { left: String, right: String },

    #[error("non-finite value at node {0}")]
    NonFinite(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Some a(x) has an eigenvalue <= 0; `witness` is the offending direction xi.
    #[error(
        "ellipticity violated at x = {point:?}: eigenvalue {eigenvalue:e} along xi = {witness:?}"
    )]
    Ellipticity {
        point: [f64; 3],
        eigenvalue: f64,
        witness: Vec<f64>,
    },

    #[error("homotopy parameter s = {0} outside [0, 1]")]
    HomotopyParameter(f64),

    #[error("operator {0} is not symmetric")]
    NotSymmetric(String),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        what: String,
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    /// The assembled system is singular: the uniqueness hypothesis (Lu,u) >= c2 (u,u) fails.
    #[error("singular system ({context}): uniqueness assumption (Lu,u) >= c2 (u,u) violated")]
    Singular { context: String },

    #[error(
        "coercivity estimate c2 = {c2:e} <= 0: uniqueness assumption (Lu,u) >= c2 (u,u) violated"
    )]
    Coercivity { c2: f64 },

    #[error("schedule needs {required} stages for c3' = {c3_prime:e}, more than max_stages = {max_stages}")]
    ScheduleOverflow {
        c3_prime: f64,
        required: usize,
        max_stages: usize,
    },

    #[error("stage {stage} rejected: contraction norm {norm:e} >= 1")]
    StageRejected { stage: usize, norm: f64 },

    #[error("stage {stage} (s = {s_start} -> {s_end}): {source}")]
    Stage {
        stage: usize,
        s_start: f64,
        s_end: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("probe {probe} violates the certified bound: {detail}")]
    ProbeViolation { probe: usize, detail: String },

    /// Homogeneous fixed-point equation u + Au = 0 has a near-nontrivial solution.
    #[error("Fredholm alternative: I + A is numerically singular (smallest singular value {sigma_min:e})")]
    FredholmAlternative { sigma_min: f64, direction: Vec<f64> },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

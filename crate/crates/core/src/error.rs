use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in `{op}`: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("backward root is not tracked on the tape")]
    UntrackedRoot,

    #[error("non-finite gradient at tape node {node}")]
    NanGradient { node: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("amplitude bound {bound} exceeded at step {step} (|x| = {magnitude})")]
    BoundExceeded {
        step: usize,
        magnitude: f64,
        bound: f64,
    },

    #[error("{0} consecutive rejected rollouts; parameter box likely yields divergent dynamics")]
    TooManyRejections(usize),

    #[error("observation mask is empty")]
    EmptyMask,

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown system `{0}`")]
    UnknownSystem(String),

    #[error("true parameter {index} is zero; percentage error undefined")]
    ZeroParameter { index: usize },

    #[error("all paired differences are zero")]
    AllZeroDifferences,

    #[error("need at least {needed} pairs, got {got}")]
    TooFewPairs { needed: usize, got: usize },

    #[error("series of length {len} too short for embedding needing more than {needed}")]
    SeriesTooShort { len: usize, needed: usize },

    #[error("no valid nearest-neighbour pairs outside the temporal exclusion window")]
    NoNeighbors,

    #[error("singular innovation matrix")]
    SingularMatrix,

    #[error("all ensemble members blown up at step {step}")]
    AllMembersBlownUp { step: usize },

    #[error("training loss became non-finite at step {step}")]
    NanLoss { step: usize },

    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

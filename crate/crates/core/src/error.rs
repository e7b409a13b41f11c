use thiserror::Error;

/// Errors raised by the numerical engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate cell: volume {volume:e} Å³ is not above {threshold:e} Å³")]
    DegenerateCell { volume: f64, threshold: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch in {op}: {detail}")]
    ShapeError { op: &'static str, detail: String },

    #[error("mean absolute error of an empty batch")]
    EmptyBatch,

    #[error("filter bank variant `{bank}` cannot evaluate frequency mode `{mode}`")]
    FilterModeError {
        bank: &'static str,
        mode: &'static str,
    },

    #[error("periodic structure is not charge neutral (total charge {0:e})")]
    NonNeutralCell(f64),

    #[error("element offset fit is rank deficient; dependent species: {0:?}")]
    RankDeficient(Vec<String>),

    #[error("could not place {atoms} atoms after {attempts} attempts")]
    PackingError { atoms: usize, attempts: usize },

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("unknown species `{0}`")]
    UnknownSpecies(String),

    #[error("missing charges: {0}")]
    MissingCharges(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

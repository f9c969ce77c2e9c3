use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the engine can report, from a malformed PDB line up to a
/// store conflict. Each variant carries a stable machine-readable code (see
/// [`Error::code`]) that is written into results files and API responses.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("malformed PDB data: {0}")]
    Format(String),
    #[error("CA atoms span more than one chain: {0}")]
    MultiChain(String),
    #[error("models share no common residues")]
    NoCommonResidues,
    #[error("chain identifiers differ: '{0}' vs '{1}'")]
    ChainMismatch(char, char),
    #[error("{mismatched} of {matched} matched residues have different names; models of different proteins?")]
    MixedProtein { mismatched: usize, matched: usize },
    #[error("at least 3 matched residues are required, found {0}")]
    TooFewResidues(usize),
    #[error("subset index {index} out of range for {len} matched residues")]
    Index { index: usize, len: usize },
    #[error("at least 2 structures are required, found {0}")]
    TooFewStructures(usize),
    #[error("{pairs} comparisons exceed the limit of {limit}")]
    CapExceeded { pairs: usize, limit: usize },
    #[error("result for pair {0} already recorded")]
    DuplicateResult(usize),
    #[error("invalid state: {0}")]
    State(String),
    #[error("no data for measure {0}")]
    NoData(String),
    #[error("entity of {size} bytes exceeds the {limit} byte limit")]
    EntityTooLarge { size: usize, limit: usize },
    #[error("not found: {0}")]
    NotFound(String),
    #[error("atomic update of {0} gave up after repeated conflicts")]
    ConflictRetryExhausted(String),
    #[error("transient store failure: {0}")]
    Transient(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("corrupt entity: {0}")]
    Corrupt(String),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::Format(_) => "FORMAT_ERROR",
            Error::MultiChain(_) => "MULTI_CHAIN",
            Error::NoCommonResidues => "NO_COMMON_RESIDUES",
            Error::ChainMismatch(..) => "CHAIN_MISMATCH",
            Error::MixedProtein { .. } => "MIXED_PROTEIN",
            Error::TooFewResidues(_) => "TOO_FEW_RESIDUES",
            Error::Index { .. } => "INDEX_ERROR",
            Error::TooFewStructures(_) => "TOO_FEW_STRUCTURES",
            Error::CapExceeded { .. } => "CAP_EXCEEDED",
            Error::DuplicateResult(_) => "DUPLICATE_RESULT",
            Error::State(_) => "STATE_ERROR",
            Error::NoData(_) => "NO_DATA",
            Error::EntityTooLarge { .. } => "ENTITY_TOO_LARGE",
            Error::NotFound(_) => "NOT_FOUND",
            Error::ConflictRetryExhausted(_) => "CONFLICT_RETRY_EXHAUSTED",
            Error::Transient(_) => "TRANSIENT",
            Error::Invalid(_) => "INVALID_INPUT",
            Error::Io(_) => "IO_ERROR",
            Error::Corrupt(_) => "CORRUPT_ENTITY",
        }
    }

    /// Failures worth retrying: the store hiccuped, the data is fine.
    pub fn is_transient(&self) -> bool {
        matches!(
            self,
            Error::Transient(_) | Error::ConflictRetryExhausted(_) | Error::Io(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Corrupt(e.to_string())
    }
}

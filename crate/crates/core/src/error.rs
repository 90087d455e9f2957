//! Error type shared across the workspace.
//!
//! Every failure mode carries a stable `E-…` code (the first token of the
//! `Display` output) so command-line consumers and tests can match on it
//! without parsing prose. [`Error::exit_code`] maps errors onto the process
//! exit convention: `2` for data/validation problems, `3` for runtime
//! failures such as unwritable outputs.

use std::path::PathBuf;

/// What an I/O operation was doing when it failed; read failures are data
/// errors, write failures are runtime errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IoAction {
    Read,
    Write,
}

/// Unified error for corpus handling, ontology parsing, prompting, prefix
/// storage, backends, the engine, and the evaluation harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("E-IO: cannot {} {path}: {source}", match .action { IoAction::Read => "read", IoAction::Write => "write" })]
    Io {
        action: IoAction,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("E-SCHEMA: line {line}: {msg}")]
    Schema { line: usize, msg: String },

    #[error("E-EMPTY: {0}")]
    Empty(String),

    #[error("E-NOANCHOR: pre-onset slicing requires an onset timestamp or an explicit anchor (user {user})")]
    NoAnchor { user: String },

    #[error("E-DEGENERATE: {0}")]
    Degenerate(String),

    #[error("E-FEWSHOT: {0}")]
    FewShot(String),

    #[error("E-SPEC: {0}")]
    BadParameter(String),

    #[error("E-ONTO-EMPTYCLASS: aspect `{aspect}` has no concepts (disease `{disease}`)")]
    OntologyEmptyClass { disease: String, aspect: String },

    #[error("E-ONTO-DUP: line {line}: concept `{surface}` already defined for disease `{disease}`")]
    OntologyDuplicate {
        disease: String,
        surface: String,
        line: usize,
    },

    #[error("E-VERB-OVERLAP: negative label `{label}` collides with a positive concept of aspect `{aspect}`")]
    VerbalizerOverlap { label: String, aspect: String },

    #[error("E-EMPTYVERB: {0}")]
    EmptyVerbalizer(String),

    #[error("E-EMPTYWINDOW: window text is empty")]
    EmptyWindow,

    #[error("E-NOPREFIX: {0}")]
    NoPrefix(String),

    #[error("E-UNKNOWNUSER: user `{0}` has no prefix row and the unseen-user fallback is disabled")]
    UnknownUser(String),

    #[error("E-EMPTYSTORE: prefix store has no user rows")]
    EmptyStore,

    #[error("E-SHAPE: {0}")]
    Shape(String),

    #[error("E-MASKCOUNT: prompt has {found} mask slot(s) but {expected} verbalizer(s) were supplied")]
    MaskCount { expected: usize, found: usize },

    #[error("E-NODIFF: backend `{0}` does not expose gradients")]
    NotDifferentiable(String),

    #[error("E-EMPTYINPUT: {0}")]
    EmptyInput(String),

    #[error("E-RAGGED: {0}")]
    Ragged(String),

    #[error("E-NOTRAIN: {0}")]
    NoTrain(String),

    #[error("E-CONFIG: {0}")]
    Config(String),
}

impl Error {
    /// Stable machine-readable code; always the text before the first `:` of
    /// the `Display` output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "E-IO",
            Error::Schema { .. } => "E-SCHEMA",
            Error::Empty(_) => "E-EMPTY",
            Error::NoAnchor { .. } => "E-NOANCHOR",
            Error::Degenerate(_) => "E-DEGENERATE",
            Error::FewShot(_) => "E-FEWSHOT",
            Error::BadParameter(_) => "E-SPEC",
            Error::OntologyEmptyClass { .. } => "E-ONTO-EMPTYCLASS",
            Error::OntologyDuplicate { .. } => "E-ONTO-DUP",
            Error::VerbalizerOverlap { .. } => "E-VERB-OVERLAP",
            Error::EmptyVerbalizer(_) => "E-EMPTYVERB",
            Error::EmptyWindow => "E-EMPTYWINDOW",
            Error::NoPrefix(_) => "E-NOPREFIX",
            Error::UnknownUser(_) => "E-UNKNOWNUSER",
            Error::EmptyStore => "E-EMPTYSTORE",
            Error::Shape(_) => "E-SHAPE",
            Error::MaskCount { .. } => "E-MASKCOUNT",
            Error::NotDifferentiable(_) => "E-NODIFF",
            Error::EmptyInput(_) => "E-EMPTYINPUT",
            Error::Ragged(_) => "E-RAGGED",
            Error::NoTrain(_) => "E-NOTRAIN",
            Error::Config(_) => "E-CONFIG",
        }
    }

    /// Process exit code for this error: `2` for data/validation failures,
    /// `3` for runtime failures (currently: failed writes).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io {
                action: IoAction::Write,
                ..
            } => 3,
            _ => 2,
        }
    }

    /// Convenience constructor for read failures.
    pub fn read_io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            action: IoAction::Read,
            path: path.into(),
            source,
        }
    }

    /// Convenience constructor for write failures.
    pub fn write_io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            action: IoAction::Write,
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

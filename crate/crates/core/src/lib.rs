//! Core library for user-level risk screening over long post histories.
//!
//! The pipeline: a user's timestamped posts are concatenated and cut into
//! fixed-size token windows; each window is rendered into cloze prompts
//! whose masked slots ask about domain concepts (symptoms, life events,
//! treatments) drawn from a small ontology; a backend fills each mask with
//! a probability; per-window, per-mask probabilities are aggregated into a
//! single normalized user score and thresholded into a decision. A
//! trainable backend additionally conditions every prompt on a per-user
//! prefix block produced by a small shared reparameterization network, so
//! scarce positive users can be fit without touching backend weights.
//!
//! Modules:
//! - [`corpus`]: JSONL ingestion, windowing, time slicing, splits, synthesis
//! - [`ontology`]: concept lists per aspect, relations, verbalizers
//! - [`prompt`]: cloze template rendering and prompt assembly
//! - [`prefix`]: per-user prefix store and its reparameterization MLP
//! - [`backend`]: scoring backends (deterministic mock, tiny attention)
//! - [`engine`]: aggregation, thresholding, calibration, prefix training
//! - [`eval`]: metrics, the repeated-run protocol, and report files
//! - [`kvcfg`]: minimal `key = value` configuration files
//! - [`util`]: seeded RNG streams, hashing, and summary statistics

pub mod backend;
pub mod corpus;
pub mod engine;
pub mod error;
pub mod eval;
pub mod kvcfg;
pub mod ontology;
pub mod prefix;
pub mod prompt;
pub mod tokenize;
pub mod util;

pub use backend::{AspectScores, Backend, BackendDescriptor, MockBackend, TinyBackend};
pub use corpus::{Corpus, Post, TokenWindow, UserRecord};
pub use engine::{
    AblationDrop, Engine, PromptVariant, Threshold, TrainConfig, TrainLog, UserScore,
};
pub use error::{Error, Result};
pub use eval::{BackendChoice, Metrics, MetricsReport, Mode};
pub use kvcfg::KvConfig;
pub use ontology::{Aspect, Concept, MaskSlot, Ontology, Verbalizer};
pub use prefix::{BlockShape, PrefixBlock, PrefixStore};
pub use prompt::{ComposedPrompt, EnsembledPrompt, SubPrompt};
pub use tokenize::{Tokenizer, WhitespaceTokenizer};

//! Scoring backends.
//!
//! A backend maps an (optionally prefixed) prompt to one positive-class
//! probability per mask slot. Two implementations ship:
//!
//! * [`MockBackend`] — a deterministic keyword oracle with no trainable
//!   state, used for fast pipeline validation.
//! * [`TinyBackend`] — a small masked-token scorer with frozen weights and a
//!   real forward/backward pass, so the per-user prefix blocks can be
//!   trained through it.

mod mock;
mod tiny;

pub use mock::{mock_oracle_score, MockBackend};
pub use tiny::{TinyBackend, TinyParams};

use std::sync::Arc;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::ontology::{MaskSlot, Verbalizer};
use crate::prefix::BlockShape;
use crate::prompt::EnsembledPrompt;
use crate::tokenize::Tokenizer;

/// Static facts about a backend the engine needs up front.
#[derive(Clone)]
pub struct BackendDescriptor {
    pub name: &'static str,
    /// Whether prompts may carry a continuous prefix block.
    pub supports_prefix: bool,
    /// Required prefix block shape, when prefixes are supported.
    pub block_shape: Option<BlockShape>,
    /// Whether [`Backend::grad_prefix`] is implemented.
    pub differentiable: bool,
    pub tokenizer: Arc<dyn Tokenizer>,
}

impl std::fmt::Debug for BackendDescriptor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BackendDescriptor")
            .field("name", &self.name)
            .field("supports_prefix", &self.supports_prefix)
            .field("block_shape", &self.block_shape)
            .field("differentiable", &self.differentiable)
            .field("tokenizer", &self.tokenizer.name())
            .finish()
    }
}

/// Per-mask positive-class probabilities for one window's prompt, in prompt
/// (mask) order.
#[derive(Debug, Clone)]
pub struct AspectScores {
    pub probs: Vec<(MaskSlot, f64)>,
    pub window_ordinal: usize,
}

impl AspectScores {
    /// Sum over mask slots — the window's contribution before normalization.
    pub fn mask_sum(&self) -> f64 {
        self.probs.iter().map(|(_, p)| p).sum()
    }
}

/// A prompt scorer.
pub trait Backend: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;

    /// Score one prompt: one probability in `[0, 1]` per mask slot.
    /// `verbalizers[i]` answers mask slot `i`.
    fn score(&self, prompt: &EnsembledPrompt, verbalizers: &[Verbalizer]) -> Result<AspectScores>;

    /// d(sum of mask probabilities)/d(prefix block), scaled by `upstream`.
    /// Only differentiable backends implement this.
    fn grad_prefix(
        &self,
        prompt: &EnsembledPrompt,
        verbalizers: &[Verbalizer],
        upstream: f64,
    ) -> Result<Array2<f64>> {
        let _ = (prompt, verbalizers);
        let _ = upstream;
        Err(Error::NotDifferentiable(self.descriptor().name.into()))
    }
}

/// Shared request validation: verbalizer/mask agreement, slot agreement,
/// non-empty label sets, and prefix admissibility.
pub(crate) fn validate_request(
    descriptor: &BackendDescriptor,
    prompt: &EnsembledPrompt,
    verbalizers: &[Verbalizer],
) -> Result<()> {
    let masks = prompt.composed.mask_count();
    if verbalizers.len() != masks {
        return Err(Error::MaskCount {
            expected: masks,
            found: verbalizers.len(),
        });
    }
    for (slot, verbalizer) in prompt.composed.slots().iter().zip(verbalizers) {
        if verbalizer.slot != *slot {
            return Err(Error::BadParameter(format!(
                "verbalizer for slot `{}` offered to mask slot `{}`",
                verbalizer.slot.id(),
                slot.id()
            )));
        }
        if verbalizer.positive_labels.is_empty() || verbalizer.negative_labels.is_empty() {
            return Err(Error::EmptyVerbalizer(verbalizer.slot.id().to_owned()));
        }
    }
    match (&prompt.prefix, descriptor.supports_prefix) {
        (Some(_), false) => Err(Error::Shape(format!(
            "backend `{}` does not accept prefix blocks",
            descriptor.name
        ))),
        (Some(block), true) => {
            let want = descriptor
                .block_shape
                .expect("prefix-capable backend must declare a block shape");
            if block.shape() != want {
                Err(Error::Shape(format!(
                    "prefix block is {}x{}, backend `{}` expects {}x{}",
                    block.shape().positions,
                    block.shape().width,
                    descriptor.name,
                    want.positions,
                    want.width
                )))
            } else {
                Ok(())
            }
        }
        (None, _) => Ok(()),
    }
}

//! Cloze prompt rendering and assembly.
//!
//! Each window of a user's stream becomes one composed prompt. The rule-based
//! template asks one masked question per aspect:
//!
//! ```text
//! {window text} is a [MASK] of depression symptom.
//! {window text} is a [MASK] of depression life event.
//! {window text} is a [MASK] of depression treatment.
//! ```
//!
//! The three sub-prompts are joined by `"; "` into one discrete token
//! sequence with exactly three mask slots. The no-rule ablation replaces the
//! triple with a single yes/no question. Binding a continuous prefix block in
//! front of the discrete sequence turns a composed prompt into an ensembled
//! prompt; all windows of one user bind the same block.

use crate::corpus::TokenWindow;
use crate::error::{Error, Result};
use crate::ontology::{Aspect, MaskSlot, Ontology};
use crate::prefix::{PrefixBlock, PrefixStore};
use crate::tokenize::Tokenizer;

/// The mask placeholder token.
pub const MASK: &str = "[MASK]";

/// One rendered sub-prompt with exactly one mask slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubPrompt {
    pub text: String,
    pub slot: MaskSlot,
    pub disease_id: String,
}

/// The discrete prompt for one window: the fixed-order sub-prompts plus the
/// raw window text they embed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComposedPrompt {
    pub sub_prompts: Vec<SubPrompt>,
    /// Detokenized window text (verbatim as embedded in the sub-prompts).
    pub window_text: String,
    pub source_user: String,
    pub window_ordinal: usize,
}

impl ComposedPrompt {
    /// Number of mask slots, `r` (3 rule-based, 1 generic).
    pub fn mask_count(&self) -> usize {
        self.sub_prompts.len()
    }

    /// Mask slots in prompt order.
    pub fn slots(&self) -> Vec<MaskSlot> {
        self.sub_prompts.iter().map(|s| s.slot).collect()
    }

    /// The sub-prompts joined into the single discrete sequence offered to a
    /// backend.
    pub fn joined_text(&self) -> String {
        self.sub_prompts
            .iter()
            .map(|s| s.text.as_str())
            .collect::<Vec<_>>()
            .join("; ")
    }
}

/// A composed prompt with an optional continuous prefix bound ahead of it.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembledPrompt {
    pub composed: ComposedPrompt,
    pub prefix: Option<PrefixBlock>,
}

impl EnsembledPrompt {
    /// Prompt without any prefix (mock scoring, no-prefix ablation).
    pub fn bare(composed: ComposedPrompt) -> Self {
        EnsembledPrompt {
            composed,
            prefix: None,
        }
    }
}

/// Render one aspect's sub-prompt:
/// `{window_text} {relation} [MASK] of {disease} {aspect phrase}.`
pub fn render_subprompt(
    window_text: &str,
    disease: &str,
    aspect: Aspect,
    relation: &str,
) -> Result<SubPrompt> {
    if window_text.trim().is_empty() {
        return Err(Error::EmptyWindow);
    }
    Ok(SubPrompt {
        text: format!(
            "{window_text} {relation} {MASK} of {disease} {}.",
            aspect.phrase()
        ),
        slot: MaskSlot::Aspect(aspect),
        disease_id: disease.to_owned(),
    })
}

/// Compose the rule-based prompt for a window: one sub-prompt per aspect in
/// canonical order, each using the ontology's relation for that aspect.
pub fn compose_prompt(
    window: &TokenWindow,
    disease: &str,
    ontology: &Ontology,
    tokenizer: &dyn Tokenizer,
) -> Result<ComposedPrompt> {
    if ontology.disease_id != disease {
        return Err(Error::BadParameter(format!(
            "prompt for disease `{disease}` composed against ontology `{}`",
            ontology.disease_id
        )));
    }
    let window_text = window.text(tokenizer);
    let sub_prompts = Aspect::ALL
        .iter()
        .map(|aspect| {
            render_subprompt(&window_text, disease, *aspect, ontology.relation_for(*aspect))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ComposedPrompt {
        sub_prompts,
        window_text,
        source_user: window.source_user.clone(),
        window_ordinal: window.ordinal,
    })
}

/// Compose the no-rule ablation prompt: a single yes/no mask.
/// `{window_text}. This text relates to {disease}: [MASK].`
pub fn generic_prompt(
    window: &TokenWindow,
    disease: &str,
    tokenizer: &dyn Tokenizer,
) -> Result<ComposedPrompt> {
    let window_text = window.text(tokenizer);
    if window_text.trim().is_empty() {
        return Err(Error::EmptyWindow);
    }
    let sub = SubPrompt {
        text: format!("{window_text}. This text relates to {disease}: {MASK}."),
        slot: MaskSlot::Generic,
        disease_id: disease.to_owned(),
    };
    Ok(ComposedPrompt {
        sub_prompts: vec![sub],
        window_text,
        source_user: window.source_user.clone(),
        window_ordinal: window.ordinal,
    })
}

/// Bind the continuous prefix for the prompt's user ahead of the discrete
/// sequence. With `allow_unseen`, users absent from the store receive the
/// unseen-user block; otherwise they are an error.
pub fn ensemble_assemble(
    composed: ComposedPrompt,
    store: &PrefixStore,
    allow_unseen: bool,
) -> Result<EnsembledPrompt> {
    let block = store
        .resolve(&composed.source_user, allow_unseen)
        .map_err(|e| match e {
            Error::UnknownUser(user) => Error::NoPrefix(format!(
                "user `{user}` is not in the prefix store and the unseen-user fallback is disabled"
            )),
            other => other,
        })?;
    Ok(EnsembledPrompt {
        composed,
        prefix: Some(block),
    })
}

//! Deterministic keyword-oracle backend.
//!
//! Scores a mask by counting how many distinct concepts of the asked-about
//! class appear in the window text (case-insensitive, word-boundary
//! matches): zero mentions give 0.02, and each mention raises the
//! probability by 0.15 from a 0.60 base, capped at 0.95. One mention is
//! enough to clear any reasonable threshold; clean windows never do.
//!
//! The mock has no trainable state: it rejects prefix blocks and cannot
//! provide gradients.

use std::sync::Arc;

use regex::Regex;

use crate::error::{Error, Result};
use crate::ontology::{Aspect, MaskSlot, Ontology, Verbalizer};
use crate::prompt::EnsembledPrompt;
use crate::tokenize::WhitespaceTokenizer;

use super::{validate_request, AspectScores, Backend, BackendDescriptor};

/// Case-insensitive whole-word matcher for one surface form.
fn word_regex(surface: &str) -> Regex {
    Regex::new(&format!(r"(?i)\b{}\b", regex::escape(surface)))
        .expect("escaped surface is always a valid pattern")
}

fn hit_probability(hits: usize) -> f64 {
    if hits == 0 {
        0.02
    } else {
        (0.60 + 0.15 * hits as f64).min(0.95)
    }
}

/// The mock fill rule as a pure function: count distinct concepts of
/// `aspect` present in `window_text` and map the count through
/// `0.02 / min(0.95, 0.60 + 0.15·hits)`.
pub fn mock_oracle_score(window_text: &str, ontology: &Ontology, aspect: Aspect) -> f64 {
    let hits = ontology
        .concepts_of(aspect)
        .filter(|c| word_regex(&c.surface).is_match(window_text))
        .count();
    hit_probability(hits)
}

/// Keyword-oracle backend over one ontology.
pub struct MockBackend {
    ontology: Ontology,
    /// Pre-compiled matchers per aspect, aligned with `Aspect::ALL`.
    matchers: Vec<Vec<Regex>>,
}

impl MockBackend {
    pub fn new(ontology: &Ontology) -> Self {
        let matchers = Aspect::ALL
            .iter()
            .map(|aspect| {
                ontology
                    .concepts_of(*aspect)
                    .map(|c| word_regex(&c.surface))
                    .collect()
            })
            .collect();
        MockBackend {
            ontology: ontology.clone(),
            matchers,
        }
    }

    fn aspect_hits(&self, window_text: &str, aspect: Aspect) -> usize {
        let idx = Aspect::ALL
            .iter()
            .position(|a| *a == aspect)
            .expect("aspect is one of the canonical three");
        self.matchers[idx]
            .iter()
            .filter(|re| re.is_match(window_text))
            .count()
    }

    /// Generic yes/no masks reuse the same counting rule over the
    /// verbalizer's positive labels instead of ontology concepts.
    fn generic_hits(&self, window_text: &str, verbalizer: &Verbalizer) -> usize {
        verbalizer
            .positive_labels
            .iter()
            .filter(|label| word_regex(label).is_match(window_text))
            .count()
    }
}

impl Backend for MockBackend {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            name: "mock",
            supports_prefix: false,
            block_shape: None,
            differentiable: false,
            tokenizer: Arc::new(WhitespaceTokenizer),
        }
    }

    fn score(&self, prompt: &EnsembledPrompt, verbalizers: &[Verbalizer]) -> Result<AspectScores> {
        validate_request(&self.descriptor(), prompt, verbalizers)?;
        if prompt
            .composed
            .sub_prompts
            .iter()
            .any(|s| s.disease_id != self.ontology.disease_id)
        {
            return Err(Error::BadParameter(format!(
                "prompt for disease `{}` scored against ontology `{}`",
                prompt.composed.sub_prompts[0].disease_id, self.ontology.disease_id
            )));
        }
        let text = &prompt.composed.window_text;
        let probs = prompt
            .composed
            .slots()
            .into_iter()
            .zip(verbalizers)
            .map(|(slot, verbalizer)| {
                let hits = match slot {
                    MaskSlot::Aspect(aspect) => self.aspect_hits(text, aspect),
                    MaskSlot::Generic => self.generic_hits(text, verbalizer),
                };
                (slot, hit_probability(hits))
            })
            .collect();
        Ok(AspectScores {
            probs,
            window_ordinal: prompt.composed.window_ordinal,
        })
    }
}

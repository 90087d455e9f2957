//! Per-disease concept knowledge and the verbalizers derived from it.
//!
//! An ontology partitions a disease's concepts into three aspect classes —
//! symptoms, life events, treatments — each concept carrying the relation
//! used when the prompt template is rendered ("anxiety *is a* … of depression
//! symptom"). Ontologies are plain editable text files so a new disease needs
//! only a new file, never a code change.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The three facets a window is interrogated about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Aspect {
    Symptom,
    LifeEvent,
    Treatment,
}

impl Aspect {
    /// Fixed canonical order: symptom, life_event, treatment.
    pub const ALL: [Aspect; 3] = [Aspect::Symptom, Aspect::LifeEvent, Aspect::Treatment];

    /// Identifier form (used in files and CSV columns).
    pub fn id(self) -> &'static str {
        match self {
            Aspect::Symptom => "symptom",
            Aspect::LifeEvent => "life_event",
            Aspect::Treatment => "treatment",
        }
    }

    /// Rendered form used inside prompt text ("life event", with a space).
    pub fn phrase(self) -> &'static str {
        match self {
            Aspect::Symptom => "symptom",
            Aspect::LifeEvent => "life event",
            Aspect::Treatment => "treatment",
        }
    }

    pub fn parse(s: &str) -> Option<Aspect> {
        match s {
            "symptom" => Some(Aspect::Symptom),
            "life_event" => Some(Aspect::LifeEvent),
            "treatment" => Some(Aspect::Treatment),
            _ => None,
        }
    }
}

/// Identifies one mask slot of a prompt: one per aspect for the rule-based
/// template, a single generic slot for the no-rule ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MaskSlot {
    Aspect(Aspect),
    Generic,
}

impl MaskSlot {
    pub fn id(self) -> &'static str {
        match self {
            MaskSlot::Aspect(a) => a.id(),
            MaskSlot::Generic => "generic",
        }
    }
}

/// One ontology entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    /// Canonical lowercase surface form; may be multi-word.
    pub surface: String,
    /// Relation used when rendering this concept's aspect ("is a", …).
    pub relation: String,
    pub aspect: Aspect,
}

/// A disease's concepts partitioned into the three aspect classes, kept in
/// file order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ontology {
    pub disease_id: String,
    pub concepts: Vec<Concept>,
}

/// Trim, lowercase, and collapse internal whitespace to single spaces.
pub fn canonicalize(surface: &str) -> String {
    surface
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

pub const DEFAULT_RELATION: &str = "is a";

/// Parse ontology text. Lines are `surface<TAB>aspect[<TAB>relation]`; the
/// relation defaults to "is a"; `#` starts a comment.
pub fn parse_ontology(text: &str, disease_id: &str) -> Result<Ontology> {
    let mut concepts: Vec<Concept> = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(Error::Schema {
                line: line_no,
                msg: format!(
                    "expected `surface<TAB>aspect[<TAB>relation]`, found {} field(s)",
                    fields.len()
                ),
            });
        }
        let surface = canonicalize(fields[0]);
        if surface.is_empty() {
            return Err(Error::Schema {
                line: line_no,
                msg: "empty concept surface".into(),
            });
        }
        let Some(aspect) = Aspect::parse(fields[1]) else {
            return Err(Error::Schema {
                line: line_no,
                msg: format!(
                    "unknown aspect `{}` (expected symptom, life_event, or treatment)",
                    fields[1]
                ),
            });
        };
        let relation = match fields.get(2) {
            Some(r) if !r.is_empty() => (*r).to_owned(),
            _ => DEFAULT_RELATION.to_owned(),
        };
        if !seen.insert(surface.clone()) {
            return Err(Error::OntologyDuplicate {
                disease: disease_id.to_owned(),
                surface,
                line: line_no,
            });
        }
        concepts.push(Concept {
            surface,
            relation,
            aspect,
        });
    }
    let ontology = Ontology {
        disease_id: disease_id.to_owned(),
        concepts,
    };
    for aspect in Aspect::ALL {
        if ontology.concepts_of(aspect).next().is_none() {
            return Err(Error::OntologyEmptyClass {
                disease: disease_id.to_owned(),
                aspect: aspect.id().to_owned(),
            });
        }
    }
    Ok(ontology)
}

/// Load an ontology file; the disease id is the file stem
/// (`depression.onto` → `depression`).
pub fn load_ontology(path: &Path) -> Result<Ontology> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::read_io(path, e))?;
    let disease = path
        .file_stem()
        .and_then(|s| s.to_str())
        .map(canonicalize)
        .filter(|s| !s.is_empty())
        .ok_or_else(|| Error::Config(format!("cannot derive a disease id from {path:?}")))?;
    parse_ontology(&text, &disease)
}

impl Ontology {
    /// Concepts of one aspect in stable file order.
    pub fn concepts_of(&self, aspect: Aspect) -> impl Iterator<Item = &Concept> {
        self.concepts.iter().filter(move |c| c.aspect == aspect)
    }

    /// The relation rendered for an aspect's sub-prompt: the most frequent
    /// relation within the class, ties broken toward earliest file order.
    pub fn relation_for(&self, aspect: Aspect) -> &str {
        let mut counts: Vec<(&str, usize)> = Vec::new();
        for c in self.concepts_of(aspect) {
            match counts.iter_mut().find(|(r, _)| *r == c.relation) {
                Some((_, n)) => *n += 1,
                None => counts.push((&c.relation, 1)),
            }
        }
        let Some(max) = counts.iter().map(|(_, n)| *n).max() else {
            return DEFAULT_RELATION;
        };
        counts
            .iter()
            .find(|(_, n)| *n == max)
            .map(|(r, _)| *r)
            .unwrap_or(DEFAULT_RELATION)
    }

    /// Serialize back to the line format; `parse_ontology` of the output
    /// yields an identical ontology.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for c in &self.concepts {
            out.push_str(&c.surface);
            out.push('\t');
            out.push_str(c.aspect.id());
            out.push('\t');
            out.push_str(&c.relation);
            out.push('\n');
        }
        out
    }
}

/// Label sets offered to the backend for one mask slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verbalizer {
    pub slot: MaskSlot,
    pub positive_labels: Vec<String>,
    pub negative_labels: Vec<String>,
}

/// Neutral/positive-sentiment words used as negative labels when no curated
/// lexicon is supplied.
pub fn default_negatives() -> Vec<String> {
    ["happy", "fine", "healthy", "normal", "unrelated"]
        .into_iter()
        .map(str::to_owned)
        .collect()
}

/// Load a negative lexicon: one word per line, `#` comments allowed.
pub fn load_negatives(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::read_io(path, e))?;
    let words: Vec<String> = text
        .lines()
        .map(|l| match l.find('#') {
            Some(pos) => &l[..pos],
            None => l,
        })
        .map(canonicalize)
        .filter(|w| !w.is_empty())
        .collect();
    Ok(words)
}

/// Build the verbalizer for one aspect: positives are the aspect's concept
/// surfaces, negatives the curated lexicon.
pub fn build_verbalizer(
    ontology: &Ontology,
    aspect: Aspect,
    negatives: &[String],
) -> Result<Verbalizer> {
    let positives: Vec<String> = ontology
        .concepts_of(aspect)
        .map(|c| c.surface.clone())
        .collect();
    if positives.is_empty() {
        return Err(Error::EmptyVerbalizer(format!(
            "aspect `{}` has no positive labels",
            aspect.id()
        )));
    }
    let negatives: Vec<String> = negatives.iter().map(|w| canonicalize(w)).collect();
    if negatives.is_empty() {
        return Err(Error::EmptyVerbalizer(
            "negative label list is empty".into(),
        ));
    }
    for neg in &negatives {
        if positives.iter().any(|p| p == neg) {
            return Err(Error::VerbalizerOverlap {
                label: neg.clone(),
                aspect: aspect.id().to_owned(),
            });
        }
    }
    Ok(Verbalizer {
        slot: MaskSlot::Aspect(aspect),
        positive_labels: positives,
        negative_labels: negatives,
    })
}

/// The yes/no verbalizer used by the no-rule ablation prompt.
pub fn generic_verbalizer() -> Verbalizer {
    Verbalizer {
        slot: MaskSlot::Generic,
        positive_labels: vec!["yes".into()],
        negative_labels: vec!["no".into()],
    }
}

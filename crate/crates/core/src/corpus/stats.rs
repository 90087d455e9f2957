//! Corpus statistics validation against an expected-stats document.
//!
//! The expectation file is the flat key/value format. Recognized count keys
//! (all optional; only present keys are compared):
//!
//! * `total_subjects`, `total_posts`, `total_words`
//! * `positive_subjects`, `positive_posts`, `positive_words`
//! * `negative_subjects`, `negative_posts`, `negative_words`
//!
//! Per-class keys require a `disease = <id>` entry naming the label used to
//! define the classes. Unrecognized keys are ignored, so generators may embed
//! extra metadata (injection rates, mention averages) in the same file.

use std::fmt;

use super::Corpus;
use crate::error::{Error, Result};
use crate::kvcfg::KvConfig;

/// One compared statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct StatRow {
    pub name: String,
    pub expected: u64,
    pub actual: u64,
    pub matched: bool,
}

/// Outcome of comparing a corpus against expected statistics. Report-only:
/// mismatches never fail the call.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub rows: Vec<StatRow>,
}

impl ValidationReport {
    pub fn all_match(&self) -> bool {
        self.rows.iter().all(|r| r.matched)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in &self.rows {
            writeln!(
                f,
                "{:<18} expected {:>10} actual {:>10} {}",
                row.name,
                row.expected,
                row.actual,
                if row.matched { "match" } else { "MISMATCH" }
            )?;
        }
        Ok(())
    }
}

#[derive(Default, Clone, Copy)]
struct Counts {
    subjects: u64,
    posts: u64,
    words: u64,
}

fn word_count(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

/// Compare a corpus against expected per-class counts. Never mutates the
/// corpus; every present expectation key becomes one report row.
pub fn validate_stats(corpus: &Corpus, expected: &KvConfig) -> Result<ValidationReport> {
    let mut total = Counts::default();
    let mut by_class = [Counts::default(), Counts::default()]; // [negative, positive]
    let disease = expected.get("disease");
    for user in &corpus.users {
        let posts = user.posts.len() as u64;
        let words: u64 = user.posts.iter().map(|p| word_count(&p.text)).sum();
        total.subjects += 1;
        total.posts += posts;
        total.words += words;
        if let Some(d) = disease {
            if let Some(y) = user.label(d) {
                let c = &mut by_class[y as usize];
                c.subjects += 1;
                c.posts += posts;
                c.words += words;
            }
        }
    }

    let mut report = ValidationReport::default();
    let mut compare = |key: &str, actual: u64| -> Result<()> {
        if let Some(raw) = expected.get(key) {
            let want: u64 = raw
                .parse()
                .map_err(|_| Error::Config(format!("key `{key}`: cannot parse `{raw}`")))?;
            report.rows.push(StatRow {
                name: key.to_owned(),
                expected: want,
                actual,
                matched: want == actual,
            });
        }
        Ok(())
    };

    compare("total_subjects", total.subjects)?;
    compare("total_posts", total.posts)?;
    compare("total_words", total.words)?;
    for (class, prefix) in [(1usize, "positive"), (0usize, "negative")] {
        for (suffix, value) in [
            ("subjects", by_class[class].subjects),
            ("posts", by_class[class].posts),
            ("words", by_class[class].words),
        ] {
            let key = format!("{prefix}_{suffix}");
            if expected.contains(&key) && disease.is_none() {
                return Err(Error::Config(format!(
                    "key `{key}` requires a `disease = <id>` entry"
                )));
            }
            compare(&key, value)?;
        }
    }
    Ok(report)
}

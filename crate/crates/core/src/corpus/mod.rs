//! User-level post corpora: ingestion, validation, tokenization, windowing,
//! time slicing, splitting, subsampling, and synthesis.
//!
//! The on-disk form is JSONL, one user per line:
//!
//! ```json
//! {"user_id": "u1", "labels": {"depression": 1}, "onset": "2020-05-04T00:00:00Z",
//!  "posts": [{"t": "2020-01-06T00:00:00Z", "text": "slept badly again"}]}
//! ```
//!
//! A user's posts are concatenated (oldest first, with a separator token
//! between posts) into one token stream, which is then cut into consecutive
//! non-overlapping windows of at most `w` tokens. The windows of a user
//! jointly reproduce the stream exactly; `m = ceil(|x|/w)`.

mod slice;
mod split;
mod stats;
mod synth;

pub use slice::{time_slice, SliceMode, TimeSlice};
pub use split::{fewshot_subset, split_corpus, SplitSpec};
pub use stats::{validate_stats, StatRow, ValidationReport};
pub use synth::{generate_synthetic, SynthSpec};

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenize::Tokenizer;

/// Default separator token inserted between consecutive posts.
pub const DEFAULT_SEPARATOR: &str = "<sep>";

/// One timestamped post. Text is non-empty after trimming.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Post {
    pub timestamp: DateTime<Utc>,
    pub text: String,
}

/// A user's ordered posts plus per-disease binary labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserRecord {
    pub user_id: String,
    /// disease id → 0/1.
    pub labels: BTreeMap<String, u8>,
    /// Optional anchor for pre-onset slicing.
    pub onset: Option<DateTime<Utc>>,
    /// Non-decreasing in timestamp.
    pub posts: Vec<Post>,
}

impl UserRecord {
    pub fn label(&self, disease: &str) -> Option<u8> {
        self.labels.get(disease).copied()
    }
}

/// A validated set of users; every user labels every disease in
/// `disease_ids`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub users: Vec<UserRecord>,
    pub disease_ids: BTreeSet<String>,
}

impl Corpus {
    pub fn user(&self, user_id: &str) -> Option<&UserRecord> {
        self.users.iter().find(|u| u.user_id == user_id)
    }

    /// Users in the order of `ids`; unknown ids are skipped.
    pub fn users_by_ids<'a>(&'a self, ids: &[String]) -> Vec<&'a UserRecord> {
        let index: BTreeMap<&str, &UserRecord> = self
            .users
            .iter()
            .map(|u| (u.user_id.as_str(), u))
            .collect();
        ids.iter()
            .filter_map(|id| index.get(id.as_str()).copied())
            .collect()
    }
}

/// One user's concatenated token stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    pub tokens: Vec<String>,
    pub source_user: String,
}

/// A contiguous slice of a [`TokenSeq`]; windows of one user are
/// non-overlapping, consecutive, and jointly cover the stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenWindow {
    pub tokens: Vec<String>,
    /// 0-based window index (offset / w).
    pub ordinal: usize,
    pub source_user: String,
}

impl TokenWindow {
    pub fn text(&self, tokenizer: &dyn Tokenizer) -> String {
        tokenizer.detokenize(&self.tokens)
    }
}

// ---------------------------------------------------------------------------
// JSONL wire format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct PostWire {
    t: String,
    text: String,
}

#[derive(Serialize, Deserialize)]
struct UserWire {
    user_id: String,
    labels: BTreeMap<String, serde_json::Value>,
    onset: Option<String>,
    posts: Vec<PostWire>,
}

fn parse_rfc3339(raw: &str, line: usize, what: &str) -> Result<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(raw)
        .map(|dt| dt.with_timezone(&Utc))
        .map_err(|e| Error::Schema {
            line,
            msg: format!("bad {what} timestamp `{raw}`: {e}"),
        })
}

fn format_rfc3339(dt: &DateTime<Utc>) -> String {
    dt.to_rfc3339_opts(SecondsFormat::Secs, true)
}

fn user_from_wire(wire: UserWire, line: usize) -> Result<Option<UserRecord>> {
    if wire.user_id.trim().is_empty() {
        return Err(Error::Schema {
            line,
            msg: "empty user_id".into(),
        });
    }
    let mut labels = BTreeMap::new();
    for (disease, value) in wire.labels {
        let bit = value.as_u64().filter(|v| *v <= 1).ok_or_else(|| Error::Schema {
            line,
            msg: format!("label `{disease}` must be 0 or 1, found {value}"),
        })?;
        labels.insert(disease, bit as u8);
    }
    let onset = match wire.onset {
        Some(raw) => Some(parse_rfc3339(&raw, line, "onset")?),
        None => None,
    };
    let mut posts = Vec::with_capacity(wire.posts.len());
    for post in wire.posts {
        if post.text.trim().is_empty() {
            log::debug!(
                "user `{}`: dropped a whitespace-only post (line {line})",
                wire.user_id
            );
            continue;
        }
        posts.push(Post {
            timestamp: parse_rfc3339(&post.t, line, "post")?,
            text: post.text,
        });
    }
    if posts.is_empty() {
        log::warn!(
            "user `{}` has no non-empty posts; dropped (line {line})",
            wire.user_id
        );
        return Ok(None);
    }
    if posts.windows(2).any(|p| p[0].timestamp > p[1].timestamp) {
        log::warn!(
            "user `{}`: posts out of order; re-sorted by timestamp (line {line})",
            wire.user_id
        );
        posts.sort_by_key(|p| p.timestamp);
    }
    Ok(Some(UserRecord {
        user_id: wire.user_id,
        labels,
        onset,
        posts,
    }))
}

/// Parse JSONL text into a validated corpus. Lines are 1-based in errors.
pub fn parse_corpus(text: &str) -> Result<Corpus> {
    let mut users: Vec<UserRecord> = Vec::new();
    let mut lines_of: Vec<usize> = Vec::new();
    let mut seen_ids: BTreeSet<String> = BTreeSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let wire: UserWire = serde_json::from_str(raw).map_err(|e| Error::Schema {
            line,
            msg: e.to_string(),
        })?;
        if let Some(user) = user_from_wire(wire, line)? {
            if !seen_ids.insert(user.user_id.clone()) {
                return Err(Error::Schema {
                    line,
                    msg: format!("duplicate user_id `{}`", user.user_id),
                });
            }
            users.push(user);
            lines_of.push(line);
        }
    }
    let disease_ids: BTreeSet<String> = users
        .iter()
        .flat_map(|u| u.labels.keys().cloned())
        .collect();
    for (user, line) in users.iter().zip(&lines_of) {
        for disease in &disease_ids {
            if !user.labels.contains_key(disease) {
                return Err(Error::Schema {
                    line: *line,
                    msg: format!(
                        "user `{}` lacks a label for disease `{disease}`",
                        user.user_id
                    ),
                });
            }
        }
    }
    Ok(Corpus { users, disease_ids })
}

/// Load a JSONL corpus file.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::read_io(path, e))?;
    parse_corpus(&text)
}

/// Render a corpus to JSONL. Byte-stable: map keys are sorted and timestamps
/// normalized to whole-second RFC3339 `Z` form.
pub fn corpus_to_jsonl(corpus: &Corpus) -> String {
    let mut out = String::new();
    for user in &corpus.users {
        let wire = UserWire {
            user_id: user.user_id.clone(),
            labels: user
                .labels
                .iter()
                .map(|(k, v)| (k.clone(), serde_json::Value::from(*v)))
                .collect(),
            onset: user.onset.as_ref().map(format_rfc3339),
            posts: user
                .posts
                .iter()
                .map(|p| PostWire {
                    t: format_rfc3339(&p.timestamp),
                    text: p.text.clone(),
                })
                .collect(),
        };
        out.push_str(&serde_json::to_string(&wire).expect("corpus wire types always serialize"));
        out.push('\n');
    }
    out
}

/// Write a corpus as JSONL.
pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    std::fs::write(path, corpus_to_jsonl(corpus)).map_err(|e| Error::write_io(path, e))
}

// ---------------------------------------------------------------------------
// Tokenization and windowing
// ---------------------------------------------------------------------------

/// Concatenate a user's posts (oldest first) into one token stream, inserting
/// `separator` between consecutive non-empty posts.
pub fn concat_tokens(
    user: &UserRecord,
    tokenizer: &dyn Tokenizer,
    separator: Option<&str>,
) -> Result<TokenSeq> {
    let mut tokens: Vec<String> = Vec::new();
    for post in &user.posts {
        let post_tokens = tokenizer.tokenize(&post.text);
        if post_tokens.is_empty() {
            continue;
        }
        if !tokens.is_empty() {
            if let Some(sep) = separator {
                tokens.push(sep.to_owned());
            }
        }
        tokens.extend(post_tokens);
    }
    if tokens.is_empty() {
        return Err(Error::Empty(format!(
            "user `{}`: every post tokenizes to zero tokens",
            user.user_id
        )));
    }
    Ok(TokenSeq {
        tokens,
        source_user: user.user_id.clone(),
    })
}

/// Cut a token stream into `m = ceil(|x|/w)` consecutive windows at offsets
/// `0, w, 2w, …`; the final window may be shorter. Concatenating the windows
/// reproduces the stream exactly.
pub fn make_windows(seq: &TokenSeq, w: usize) -> Result<Vec<TokenWindow>> {
    if w == 0 {
        return Err(Error::BadParameter("window size w must be ≥ 1".into()));
    }
    if seq.tokens.is_empty() {
        return Err(Error::Empty(format!(
            "user `{}`: cannot window an empty token stream",
            seq.source_user
        )));
    }
    Ok(seq
        .tokens
        .chunks(w)
        .enumerate()
        .map(|(ordinal, chunk)| TokenWindow {
            tokens: chunk.to_vec(),
            ordinal,
            source_user: seq.source_user.clone(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenize::WhitespaceTokenizer;
    use chrono::TimeZone;

    fn ts(day: i64) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2020, 1, 6, 0, 0, 0).unwrap() + chrono::Duration::days(day)
    }

    pub(crate) fn user_with_posts(id: &str, texts: &[&str]) -> UserRecord {
        UserRecord {
            user_id: id.into(),
            labels: BTreeMap::from([("depression".to_string(), 0)]),
            onset: None,
            posts: texts
                .iter()
                .enumerate()
                .map(|(i, t)| Post {
                    timestamp: ts(i as i64),
                    text: (*t).to_owned(),
                })
                .collect(),
        }
    }

    #[test]
    fn parses_three_valid_lines() {
        let text = r#"{"user_id":"a","labels":{"depression":1},"onset":"2020-05-04T00:00:00Z","posts":[{"t":"2020-01-06T00:00:00Z","text":"hello world"}]}
{"user_id":"b","labels":{"depression":0},"onset":null,"posts":[{"t":"2020-01-07T00:00:00Z","text":"x"}]}
{"user_id":"c","labels":{"depression":0},"onset":null,"posts":[{"t":"2020-01-08T00:00:00Z","text":"y"}]}
"#;
        let corpus = parse_corpus(text).unwrap();
        assert_eq!(corpus.users.len(), 3);
        assert_eq!(corpus.disease_ids.len(), 1);
        assert_eq!(corpus.users[0].label("depression"), Some(1));
        assert!(corpus.users[0].onset.is_some());
    }

    #[test]
    fn bad_label_reports_line() {
        let text = "{\"user_id\":\"a\",\"labels\":{\"depression\":1},\"onset\":null,\"posts\":[{\"t\":\"2020-01-06T00:00:00Z\",\"text\":\"x\"}]}\n{\"user_id\":\"b\",\"labels\":{\"depression\":2},\"onset\":null,\"posts\":[{\"t\":\"2020-01-06T00:00:00Z\",\"text\":\"x\"}]}\n";
        let err = parse_corpus(text).unwrap_err();
        assert_eq!(err.code(), "E-SCHEMA");
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn out_of_order_posts_are_resorted() {
        let text = "{\"user_id\":\"a\",\"labels\":{\"d\":0},\"onset\":null,\"posts\":[{\"t\":\"2020-01-08T00:00:00Z\",\"text\":\"later\"},{\"t\":\"2020-01-06T00:00:00Z\",\"text\":\"earlier\"}]}\n";
        let corpus = parse_corpus(text).unwrap();
        let posts = &corpus.users[0].posts;
        assert_eq!(posts[0].text, "earlier");
        assert_eq!(posts[1].text, "later");
        assert!(posts[0].timestamp <= posts[1].timestamp);
    }

    #[test]
    fn user_with_only_empty_posts_is_dropped() {
        let text = "{\"user_id\":\"a\",\"labels\":{\"d\":0},\"onset\":null,\"posts\":[{\"t\":\"2020-01-06T00:00:00Z\",\"text\":\"  \"}]}\n{\"user_id\":\"b\",\"labels\":{\"d\":1},\"onset\":null,\"posts\":[{\"t\":\"2020-01-06T00:00:00Z\",\"text\":\"real\"}]}\n";
        let corpus = parse_corpus(text).unwrap();
        assert_eq!(corpus.users.len(), 1);
        assert_eq!(corpus.users[0].user_id, "b");
    }

    #[test]
    fn duplicate_user_id_rejected() {
        let line = "{\"user_id\":\"a\",\"labels\":{\"d\":0},\"onset\":null,\"posts\":[{\"t\":\"2020-01-06T00:00:00Z\",\"text\":\"x\"}]}\n";
        let err = parse_corpus(&format!("{line}{line}")).unwrap_err();
        assert_eq!(err.code(), "E-SCHEMA");
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn missing_disease_label_rejected() {
        let text = "{\"user_id\":\"a\",\"labels\":{\"d\":0,\"e\":1},\"onset\":null,\"posts\":[{\"t\":\"2020-01-06T00:00:00Z\",\"text\":\"x\"}]}\n{\"user_id\":\"b\",\"labels\":{\"d\":1},\"onset\":null,\"posts\":[{\"t\":\"2020-01-06T00:00:00Z\",\"text\":\"x\"}]}\n";
        let err = parse_corpus(text).unwrap_err();
        assert_eq!(err.code(), "E-SCHEMA");
        assert!(err.to_string().contains("lacks a label"));
    }

    #[test]
    fn jsonl_round_trips() {
        let corpus = parse_corpus(
            "{\"user_id\":\"a\",\"labels\":{\"d\":1},\"onset\":\"2020-05-04T00:00:00Z\",\"posts\":[{\"t\":\"2020-01-06T00:00:00Z\",\"text\":\"hello\"}]}\n",
        )
        .unwrap();
        let rendered = corpus_to_jsonl(&corpus);
        let reparsed = parse_corpus(&rendered).unwrap();
        assert_eq!(corpus, reparsed);
        assert_eq!(corpus_to_jsonl(&reparsed), rendered);
    }

    #[test]
    fn concat_inserts_separator_between_posts() {
        let user = user_with_posts("u", &["a b", "c"]);
        let seq = concat_tokens(&user, &WhitespaceTokenizer, Some("<sep>")).unwrap();
        assert_eq!(seq.tokens, ["a", "b", "<sep>", "c"]);
    }

    #[test]
    fn concat_single_post_has_no_separator() {
        let user = user_with_posts("u", &["a b c"]);
        let seq = concat_tokens(&user, &WhitespaceTokenizer, Some("<sep>")).unwrap();
        assert_eq!(seq.tokens, ["a", "b", "c"]);
    }

    #[test]
    fn concat_of_token_free_posts_errors() {
        // Posts that are non-empty text but tokenize to nothing cannot happen
        // with the whitespace tokenizer (load drops whitespace-only posts),
        // so construct the record directly.
        let user = UserRecord {
            user_id: "u".into(),
            labels: BTreeMap::new(),
            onset: None,
            posts: vec![Post {
                timestamp: ts(0),
                text: " \t ".into(),
            }],
        };
        let err = concat_tokens(&user, &WhitespaceTokenizer, None).unwrap_err();
        assert_eq!(err.code(), "E-EMPTY");
    }

    #[test]
    fn windows_cover_stream_with_short_tail() {
        let seq = TokenSeq {
            tokens: (0..10).map(|i| i.to_string()).collect(),
            source_user: "u".into(),
        };
        let windows = make_windows(&seq, 3).unwrap();
        let lens: Vec<usize> = windows.iter().map(|w| w.tokens.len()).collect();
        assert_eq!(lens, [3, 3, 3, 1]);
        assert_eq!(windows.len(), 4);
        let rejoined: Vec<String> = windows.into_iter().flat_map(|w| w.tokens).collect();
        assert_eq!(rejoined, seq.tokens);
    }

    #[test]
    fn window_equal_to_stream_is_identity() {
        let seq = TokenSeq {
            tokens: (0..6).map(|i| i.to_string()).collect(),
            source_user: "u".into(),
        };
        let windows = make_windows(&seq, 6).unwrap();
        assert_eq!(windows.len(), 1);
        assert_eq!(windows[0].tokens, seq.tokens);
        assert_eq!(windows[0].ordinal, 0);
    }

    #[test]
    fn window_count_is_ceiling() {
        let seq = TokenSeq {
            tokens: (0..1000).map(|i| i.to_string()).collect(),
            source_user: "u".into(),
        };
        let windows = make_windows(&seq, 128).unwrap();
        assert_eq!(windows.len(), 8);
        assert_eq!(windows.last().unwrap().tokens.len(), 104);
    }

    #[test]
    fn empty_stream_and_zero_width_are_rejected() {
        let empty = TokenSeq {
            tokens: vec![],
            source_user: "u".into(),
        };
        assert_eq!(make_windows(&empty, 4).unwrap_err().code(), "E-EMPTY");
        let seq = TokenSeq {
            tokens: vec!["a".into()],
            source_user: "u".into(),
        };
        assert_eq!(make_windows(&seq, 0).unwrap_err().code(), "E-SPEC");
    }
}

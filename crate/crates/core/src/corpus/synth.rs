//! Deterministic synthetic corpora.
//!
//! The generator plants ontology concept mentions into otherwise label-neutral
//! filler text: positives at configurable per-aspect per-post rates, negatives
//! at (much lower) rates. Each user writes in one of `style_count` nuisance
//! styles — a distinct filler vocabulary plus a style marker word — so the
//! style signal is strong but label-free. Positives get an onset timestamp
//! near the end of their posting history, which gives early-prediction
//! slicing something to anchor on.
//!
//! Everything is a pure function of `(spec, ontology, seed)`: two calls with
//! equal inputs produce byte-identical JSONL.

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use std::collections::BTreeSet;

use super::{Corpus, Post, UserRecord};
use crate::error::{Error, Result};
use crate::kvcfg::KvConfig;
use crate::ontology::{Aspect, Ontology};
use crate::util::derive_rng;

/// Generator parameters. Injection rates are per-post probabilities, indexed
/// by aspect in canonical order (symptom, life_event, treatment).
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub disease_id: String,
    pub users: usize,
    pub positive_ratio: f64,
    pub posts_min: usize,
    pub posts_max: usize,
    pub words_min: usize,
    pub words_max: usize,
    pub pos_inject: [f64; 3],
    pub neg_inject: [f64; 3],
    /// Half-width of the per-user multiplicative rate jitter; 0 disables it.
    pub rate_jitter: f64,
    pub style_count: usize,
    pub history_weeks: i64,
    pub onset_weeks_before_end: i64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            disease_id: "depression".into(),
            users: 200,
            positive_ratio: 1.0 / 7.0,
            posts_min: 20,
            posts_max: 40,
            words_min: 6,
            words_max: 14,
            pos_inject: [0.12, 0.08, 0.08],
            neg_inject: [0.001, 0.001, 0.001],
            rate_jitter: 0.5,
            style_count: 6,
            history_weeks: 60,
            onset_weeks_before_end: 4,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::BadParameter(msg));
        if self.users < 2 {
            return bad(format!("users must be ≥ 2, got {}", self.users));
        }
        if !(self.positive_ratio > 0.0 && self.positive_ratio < 1.0) {
            return bad(format!(
                "positive_ratio must lie in (0,1), got {}",
                self.positive_ratio
            ));
        }
        let n_pos = self.positive_count();
        if n_pos == 0 || n_pos >= self.users {
            return bad(format!(
                "positive_ratio {} leaves no room for both classes among {} users",
                self.positive_ratio, self.users
            ));
        }
        if self.posts_min == 0 || self.posts_min > self.posts_max {
            return bad(format!(
                "posts range [{}, {}] is invalid",
                self.posts_min, self.posts_max
            ));
        }
        if self.words_min == 0 || self.words_min > self.words_max {
            return bad(format!(
                "words range [{}, {}] is invalid",
                self.words_min, self.words_max
            ));
        }
        for rate in self.pos_inject.iter().chain(self.neg_inject.iter()) {
            if !(0.0..=1.0).contains(rate) {
                return bad(format!("injection rates must lie in [0,1], got {rate}"));
            }
        }
        if !(0.0..1.0).contains(&self.rate_jitter) {
            return bad(format!(
                "rate_jitter must lie in [0,1), got {}",
                self.rate_jitter
            ));
        }
        if self.style_count == 0 {
            return bad("style_count must be ≥ 1".into());
        }
        if self.history_weeks < 1 {
            return bad(format!(
                "history_weeks must be ≥ 1, got {}",
                self.history_weeks
            ));
        }
        if self.onset_weeks_before_end < 0 || self.onset_weeks_before_end >= self.history_weeks {
            return bad(format!(
                "onset_weeks_before_end {} must lie in [0, history_weeks)",
                self.onset_weeks_before_end
            ));
        }
        Ok(())
    }

    pub fn positive_count(&self) -> usize {
        (self.users as f64 * self.positive_ratio).round() as usize
    }

    /// Read a spec from the flat key/value format; absent keys keep defaults.
    pub fn from_kv(cfg: &KvConfig) -> Result<Self> {
        let d = SynthSpec::default();
        let spec = SynthSpec {
            disease_id: cfg.get("disease").unwrap_or(&d.disease_id).to_owned(),
            users: cfg.get_parsed("users", d.users)?,
            positive_ratio: cfg.get_parsed("positive_ratio", d.positive_ratio)?,
            posts_min: cfg.get_parsed("posts_min", d.posts_min)?,
            posts_max: cfg.get_parsed("posts_max", d.posts_max)?,
            words_min: cfg.get_parsed("words_min", d.words_min)?,
            words_max: cfg.get_parsed("words_max", d.words_max)?,
            pos_inject: [
                cfg.get_parsed("pos_inject_symptom", d.pos_inject[0])?,
                cfg.get_parsed("pos_inject_life_event", d.pos_inject[1])?,
                cfg.get_parsed("pos_inject_treatment", d.pos_inject[2])?,
            ],
            neg_inject: [
                cfg.get_parsed("neg_inject_symptom", d.neg_inject[0])?,
                cfg.get_parsed("neg_inject_life_event", d.neg_inject[1])?,
                cfg.get_parsed("neg_inject_treatment", d.neg_inject[2])?,
            ],
            rate_jitter: cfg.get_parsed("rate_jitter", d.rate_jitter)?,
            style_count: cfg.get_parsed("style_count", d.style_count)?,
            history_weeks: cfg.get_parsed("history_weeks", d.history_weeks)?,
            onset_weeks_before_end: cfg.get_parsed("onset_weeks_before_end", d.onset_weeks_before_end)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut cfg = KvConfig::new();
        cfg.set("disease", &self.disease_id);
        cfg.set("users", self.users);
        cfg.set("positive_ratio", self.positive_ratio);
        cfg.set("posts_min", self.posts_min);
        cfg.set("posts_max", self.posts_max);
        cfg.set("words_min", self.words_min);
        cfg.set("words_max", self.words_max);
        cfg.set("pos_inject_symptom", self.pos_inject[0]);
        cfg.set("pos_inject_life_event", self.pos_inject[1]);
        cfg.set("pos_inject_treatment", self.pos_inject[2]);
        cfg.set("neg_inject_symptom", self.neg_inject[0]);
        cfg.set("neg_inject_life_event", self.neg_inject[1]);
        cfg.set("neg_inject_treatment", self.neg_inject[2]);
        cfg.set("rate_jitter", self.rate_jitter);
        cfg.set("style_count", self.style_count);
        cfg.set("history_weeks", self.history_weeks);
        cfg.set("onset_weeks_before_end", self.onset_weeks_before_end);
        cfg
    }
}

/// Label-neutral filler vocabulary the per-style pools are drawn from.
const BASE_WORDS: [&str; 49] = [
    "about", "after", "again", "always", "around", "because", "before", "better", "coffee",
    "day", "dinner", "evening", "every", "friend", "game", "garden", "home", "kitchen", "later",
    "little", "lunch", "maybe", "morning", "movie", "music", "never", "night", "often",
    "outside", "people", "photo", "plan", "rain", "reading", "really", "road", "running",
    "slow", "some", "sometimes", "street", "sunny", "there", "time", "today", "walk",
    "weather", "weekend", "window",
];

/// Sentence frames a planted concept is embedded into.
const CARRIERS: [&str; 4] = [
    "i keep thinking about {} these days",
    "someone mentioned {} to me today",
    "we talked about {} for a while",
    "dealing with {} again this week",
];

fn style_pool(style: usize, base: &[&'static str]) -> Vec<String> {
    let mut pool: Vec<String> = Vec::with_capacity(13);
    for j in 0..12 {
        let idx = (style * 5 + j * 3) % base.len();
        let word = base[idx].to_owned();
        if !pool.contains(&word) {
            pool.push(word);
        }
    }
    pool.push(format!("quirk{style}"));
    pool
}

fn filler_sentence(rng: &mut ChaCha12Rng, pool: &[String], n_words: usize) -> String {
    let mut words = Vec::with_capacity(n_words);
    for _ in 0..n_words {
        words.push(pool[rng.random_range(0..pool.len())].clone());
    }
    words.join(" ")
}

/// Generate a corpus plus its own expected-stats document (flat key/value;
/// directly consumable by `validate_stats`).
pub fn generate_synthetic(
    spec: &SynthSpec,
    ontology: &Ontology,
    seed: u64,
) -> Result<(Corpus, KvConfig)> {
    spec.validate()?;
    if ontology.disease_id != spec.disease_id {
        return Err(Error::BadParameter(format!(
            "spec disease `{}` does not match ontology disease `{}`",
            spec.disease_id, ontology.disease_id
        )));
    }
    // Filler words must not collide with concept tokens, or negatives would
    // accidentally mention concepts at filler rates.
    let concept_tokens: BTreeSet<&str> = ontology
        .concepts
        .iter()
        .flat_map(|c| c.surface.split(' '))
        .collect();
    let base: Vec<&'static str> = BASE_WORDS
        .into_iter()
        .filter(|w| !concept_tokens.contains(w))
        .collect();
    if base.len() < 12 {
        return Err(Error::BadParameter(
            "ontology concepts overlap almost all filler vocabulary".into(),
        ));
    }
    let aspect_concepts: Vec<Vec<&str>> = Aspect::ALL
        .iter()
        .map(|a| {
            ontology
                .concepts_of(*a)
                .map(|c| c.surface.as_str())
                .collect()
        })
        .collect();

    let base_time: DateTime<Utc> = Utc.with_ymd_and_hms(2020, 1, 6, 0, 0, 0).unwrap();
    let history_secs = spec.history_weeks * 7 * 24 * 3600;
    let n_pos = spec.positive_count();
    let id_width = spec.users.to_string().len().max(4);

    let mut users = Vec::with_capacity(spec.users);
    let mut mentions = [0u64; 2]; // [negative, positive] injection events

    for u in 0..spec.users {
        let mut rng = derive_rng(seed, "synth-user", u as u64);
        let positive = u < n_pos;
        let label = u8::from(positive);
        let style = rng.random_range(0..spec.style_count);
        let pool = style_pool(style, &base);
        let jitter = if spec.rate_jitter > 0.0 {
            1.0 + rng.random_range(-spec.rate_jitter..=spec.rate_jitter)
        } else {
            1.0
        };
        let n_posts = rng.random_range(spec.posts_min..=spec.posts_max);
        let mut offsets: Vec<i64> = (0..n_posts)
            .map(|_| rng.random_range(0..history_secs))
            .collect();
        offsets.sort_unstable();

        let mut posts = Vec::with_capacity(n_posts);
        for offset in offsets {
            let n_words = rng.random_range(spec.words_min..=spec.words_max);
            let mut text = filler_sentence(&mut rng, &pool, n_words);
            for (i, _aspect) in Aspect::ALL.iter().enumerate() {
                let rate = if positive {
                    spec.pos_inject[i]
                } else {
                    spec.neg_inject[i]
                } * jitter;
                if !aspect_concepts[i].is_empty() && rng.random::<f64>() < rate {
                    let concept = aspect_concepts[i][rng.random_range(0..aspect_concepts[i].len())];
                    let carrier = CARRIERS[rng.random_range(0..CARRIERS.len())];
                    text.push(' ');
                    text.push_str(&carrier.replace("{}", concept));
                    mentions[label as usize] += 1;
                }
            }
            posts.push(Post {
                timestamp: base_time + Duration::seconds(offset),
                text,
            });
        }
        let onset = positive.then(|| {
            base_time + Duration::seconds(history_secs)
                - Duration::weeks(spec.onset_weeks_before_end)
        });
        users.push(UserRecord {
            user_id: format!("u{u:0id_width$}"),
            labels: std::collections::BTreeMap::from([(spec.disease_id.clone(), label)]),
            onset,
            posts,
        });
    }

    let corpus = Corpus {
        users,
        disease_ids: BTreeSet::from([spec.disease_id.clone()]),
    };

    // The generator's own expectation document; count keys are exact.
    let mut expected = KvConfig::new();
    expected.set("disease", &spec.disease_id);
    let mut count = |label: u8, prefix: &str| {
        let class: Vec<&UserRecord> = corpus
            .users
            .iter()
            .filter(|u| u.label(&spec.disease_id) == Some(label))
            .collect();
        let posts: u64 = class.iter().map(|u| u.posts.len() as u64).sum();
        let words: u64 = class
            .iter()
            .flat_map(|u| u.posts.iter())
            .map(|p| p.text.split_whitespace().count() as u64)
            .sum();
        expected.set(format!("{prefix}_subjects").as_str(), class.len());
        expected.set(format!("{prefix}_posts").as_str(), posts);
        expected.set(format!("{prefix}_words").as_str(), words);
    };
    count(1, "positive");
    count(0, "negative");
    expected.set("total_subjects", corpus.users.len());
    expected.set(
        "total_posts",
        corpus
            .users
            .iter()
            .map(|u| u.posts.len() as u64)
            .sum::<u64>(),
    );
    let avg = |m: u64, n: usize| {
        if n == 0 {
            0.0
        } else {
            m as f64 / n as f64
        }
    };
    expected.set(
        "positive_avg_mentions",
        format!("{:.4}", avg(mentions[1], n_pos)),
    );
    expected.set(
        "negative_avg_mentions",
        format!("{:.4}", avg(mentions[0], spec.users - n_pos)),
    );
    expected.set("seed", seed);
    Ok((corpus, expected))
}

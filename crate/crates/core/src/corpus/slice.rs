//! Time slicing for early-prediction and time-window experiments.
//!
//! Two interval rules, both anchored at an instant `a`:
//!
//! * pre-onset: keep posts in `[a − (x+span) weeks, a − x weeks)` — the
//!   span-week block ending `x` weeks before the anchor (onset by default);
//! * pre-prediction: keep posts in `[a − x weeks, a]` — the most recent `x`
//!   weeks up to the anchor (last post by default).

use chrono::{DateTime, Duration, Utc};

use super::{Post, UserRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceMode {
    /// Posts from `x+span` to `x` weeks before the anchor (onset).
    PreOnset,
    /// Posts from `x` weeks before the anchor (last post) up to it.
    PrePrediction,
}

/// A sliced user plus the flag callers use to decide exclusion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimeSlice {
    pub record: UserRecord,
    /// True when no posts fall inside the interval.
    pub empty_slice: bool,
}

/// Restrict a user's posts to the mode's interval. Labels, id, and onset are
/// preserved; relative post order is preserved. `span_weeks` is only used by
/// [`SliceMode::PreOnset`].
pub fn time_slice(
    user: &UserRecord,
    mode: SliceMode,
    x_weeks: i64,
    span_weeks: i64,
    anchor: Option<DateTime<Utc>>,
) -> Result<TimeSlice> {
    if x_weeks <= 0 {
        return Err(Error::BadParameter(format!(
            "x_weeks must be positive, got {x_weeks}"
        )));
    }
    if mode == SliceMode::PreOnset && span_weeks <= 0 {
        return Err(Error::BadParameter(format!(
            "span_weeks must be positive, got {span_weeks}"
        )));
    }
    let keep: Box<dyn Fn(DateTime<Utc>) -> bool> = match mode {
        SliceMode::PreOnset => {
            let anchor = anchor.or(user.onset).ok_or_else(|| Error::NoAnchor {
                user: user.user_id.clone(),
            })?;
            let lo = anchor - Duration::weeks(x_weeks + span_weeks);
            let hi = anchor - Duration::weeks(x_weeks);
            Box::new(move |t| t >= lo && t < hi)
        }
        SliceMode::PrePrediction => {
            let anchor = anchor
                .or_else(|| user.posts.last().map(|p| p.timestamp))
                .ok_or_else(|| Error::Empty(format!("user `{}` has no posts", user.user_id)))?;
            let lo = anchor - Duration::weeks(x_weeks);
            Box::new(move |t| t >= lo && t <= anchor)
        }
    };
    let posts: Vec<Post> = user
        .posts
        .iter()
        .filter(|p| keep(p.timestamp))
        .cloned()
        .collect();
    let empty_slice = posts.is_empty();
    Ok(TimeSlice {
        record: UserRecord {
            user_id: user.user_id.clone(),
            labels: user.labels.clone(),
            onset: user.onset,
            posts,
        },
        empty_slice,
    })
}

//! Observables of a single score vector: order statistics, exceedance counts
//! `Z_t`, tied pairs above a threshold `W_n(t)`, and the distinctness events
//! for the top and bottom `k` scores.
//!
//! Thresholds are scaled integers and comparisons are strict (`s > t`).

use std::collections::HashMap;

use thiserror::Error;

use crate::engine::ScoreVector;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StatisticsError {
    #[error("k = {k} is outside 1..={n}")]
    KOutOfRange { k: usize, n: usize },
}

/// Scores sorted in ascending order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoreSummary {
    pub q: u32,
    pub sorted: Vec<u64>,
}

impl ScoreSummary {
    pub fn n(&self) -> usize {
        self.sorted.len()
    }

    pub fn max(&self) -> u64 {
        *self.sorted.last().expect("non-empty")
    }

    pub fn min(&self) -> u64 {
        self.sorted[0]
    }
}

pub fn order_scores(v: &ScoreVector) -> ScoreSummary {
    let mut sorted = v.scores().to_vec();
    sorted.sort_unstable();
    ScoreSummary { q: v.q(), sorted }
}

/// Converts a real threshold to the scaled lattice, `floor(t * q)`.
///
/// For integer `s`, `s / q > t` holds exactly when `s > floor(t q)`.
pub fn scaled_threshold(t: f64, q: u32) -> i64 {
    (t * f64::from(q)).floor() as i64
}

/// `Z_t`: number of scores strictly greater than `t`.
pub fn count_exceed(v: &ScoreVector, t: i64) -> usize {
    v.scores().iter().filter(|&&s| s as i64 > t).count()
}

/// `W_n(t)`: number of unordered pairs of players tied at a common score
/// strictly greater than `t`.
pub fn count_tied_pairs_above(v: &ScoreVector, t: i64) -> u64 {
    let mut multiplicity: HashMap<u64, u64> = HashMap::new();
    for &s in v.scores() {
        if s as i64 > t {
            *multiplicity.entry(s).or_default() += 1;
        }
    }
    multiplicity.values().map(|&m| m * (m - 1) / 2).sum()
}

fn check_k(k: usize, n: usize) -> Result<(), StatisticsError> {
    if k == 0 || k > n {
        return Err(StatisticsError::KOutOfRange { k, n });
    }
    Ok(())
}

fn strictly_increasing(s: &[u64]) -> bool {
    s.windows(2).all(|w| w[0] < w[1])
}

/// Event `U_{n,k}`: the `k` largest scores are pairwise distinct.
pub fn top_k_distinct(v: &ScoreVector, k: usize) -> Result<bool, StatisticsError> {
    let n = v.n();
    check_k(k, n)?;
    if k == 1 {
        return Ok(true);
    }
    let mut buf = v.scores().to_vec();
    buf.select_nth_unstable(n - k);
    let top = &mut buf[n - k..];
    top.sort_unstable();
    Ok(strictly_increasing(top))
}

/// The bottom-`k` analogue of [`top_k_distinct`].
pub fn bottom_k_distinct(v: &ScoreVector, k: usize) -> Result<bool, StatisticsError> {
    let n = v.n();
    check_k(k, n)?;
    if k == 1 {
        return Ok(true);
    }
    let mut buf = v.scores().to_vec();
    buf.select_nth_unstable(k - 1);
    let bottom = &mut buf[..k];
    bottom.sort_unstable();
    Ok(strictly_increasing(bottom))
}

/// Scores of the tournament with every match result reversed: `s_i -> q(n-1) - s_i`.
pub fn reverse_scores(v: &ScoreVector) -> ScoreVector {
    let max = v.max_score();
    ScoreVector::new(v.q(), v.scores().iter().map(|&s| max - s).collect())
        .expect("complement stays in range")
}

/// Distinctness of the top and bottom `k` read off an already sorted summary.
pub fn summary_top_k_distinct(summary: &ScoreSummary, k: usize) -> bool {
    let n = summary.n();
    strictly_increasing(&summary.sorted[n - k.min(n)..])
}

pub fn summary_bottom_k_distinct(summary: &ScoreSummary, k: usize) -> bool {
    strictly_increasing(&summary.sorted[..k.min(summary.n())])
}

//! Tournament simulation.
//!
//! Scores are accumulated in a flat `u64` array while streaming over the
//! `C(n, 2)` pairs in row-major order; the match matrix is never stored.

use std::fmt;
use std::io::{self, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::distributions::ScoreDistribution;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("a tournament needs at least 2 players, got {0}")]
    PlayerCountTooSmall(usize),
    #[error("score {score} of player {player} exceeds the maximum {max}")]
    ScoreOutOfRange { player: usize, score: u64, max: u64 },
}

/// Deterministic random stream identified by `(seed, stream_id)`.
///
/// Backed by ChaCha8 with the stream id selecting one of its 2^64
/// independent keystreams.
#[derive(Debug, Clone)]
pub struct RandomStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RandomStream {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub(crate) fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// Scores of one tournament in units of `1/q`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoreVector {
    q: u32,
    scores: Vec<u64>,
}

impl ScoreVector {
    /// Wraps raw scores, checking `n >= 2` and `0 <= s_i <= q(n-1)`.
    ///
    /// Conservation is not required here so that arbitrary score patterns
    /// can be analysed; see [`ScoreVector::is_conserved`].
    pub fn new(q: u32, scores: Vec<u64>) -> Result<Self, EngineError> {
        let n = scores.len();
        if n < 2 {
            return Err(EngineError::PlayerCountTooSmall(n));
        }
        let max = u64::from(q) * (n as u64 - 1);
        if let Some((player, &score)) = scores.iter().enumerate().find(|(_, &s)| s > max) {
            return Err(EngineError::ScoreOutOfRange { player, score, max });
        }
        Ok(ScoreVector { q, scores })
    }

    pub fn n(&self) -> usize {
        self.scores.len()
    }

    pub fn q(&self) -> u32 {
        self.q
    }

    pub fn scores(&self) -> &[u64] {
        &self.scores
    }

    pub fn into_scores(self) -> Vec<u64> {
        self.scores
    }

    /// Largest attainable scaled score, `q(n-1)`.
    pub fn max_score(&self) -> u64 {
        u64::from(self.q) * (self.n() as u64 - 1)
    }

    /// Total points distributed by a full tournament, `q n(n-1)/2`.
    pub fn conserved_total(&self) -> u64 {
        let n = self.n() as u64;
        u64::from(self.q) * n * (n - 1) / 2
    }

    pub fn is_conserved(&self) -> bool {
        self.scores.iter().sum::<u64>() == self.conserved_total()
    }

    /// Writes the debugging dump: a `#` header line followed by one score per line.
    pub fn write_dump<W: Write>(&self, mut out: W, seed: u64, stream_id: u64) -> io::Result<()> {
        writeln!(
            out,
            "# n={} q={} seed={} stream_id={}",
            self.n(),
            self.q,
            seed,
            stream_id
        )?;
        for s in &self.scores {
            writeln!(out, "{s}")?;
        }
        Ok(())
    }
}

impl fmt::Display for ScoreVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.scores.iter().map(u64::to_string).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// Plays every pair `i < j` once. Player `i` receives the drawn `a`,
/// player `j` receives `q - a`.
pub fn simulate_scores(
    d: &ScoreDistribution,
    n: usize,
    stream: &mut RandomStream,
) -> Result<ScoreVector, EngineError> {
    if n < 2 {
        return Err(EngineError::PlayerCountTooSmall(n));
    }
    let mut scores = vec![0u64; n];
    let rng = stream.rng();
    for i in 0..n - 1 {
        let (head, rest) = scores.split_at_mut(i + 1);
        head[i] += d.accumulate_row(rng, rest);
    }
    let v = ScoreVector {
        q: d.denominator(),
        scores,
    };
    debug_assert!(v.is_conserved());
    Ok(v)
}

/// Like [`simulate_scores`], additionally returning `Z_t`, the number of
/// scores strictly above the scaled threshold `t`.
pub fn simulate_degree_only(
    d: &ScoreDistribution,
    n: usize,
    stream: &mut RandomStream,
    t: i64,
) -> Result<(ScoreVector, usize), EngineError> {
    let v = simulate_scores(d, n, stream)?;
    let z = crate::statistics::count_exceed(&v, t);
    Ok((v, z))
}

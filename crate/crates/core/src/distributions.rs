//! Per-match score distributions with finite, symmetric rational support.
//!
//! A distribution lives on the lattice `{0, 1/q, ..., 1}`: support points are
//! stored as integers `v` in `[0, q]` so that every tournament score is an
//! exact integer multiple of `1/q`. Symmetry `P(v) = P(q - v)` is enforced at
//! construction.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::RandomStream;

/// Tolerance used when probabilities are supplied as decimals.
pub const DECIMAL_TOLERANCE: f64 = 1e-12;

/// Largest number of random bits per draw for which the table sampler is used.
const MAX_TABLE_BITS: u32 = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistributionError {
    #[error("denominator must be at least 1")]
    ZeroDenominator,
    #[error("support value {value} lies outside [0, {denominator}]")]
    ValueOutOfRange { value: i64, denominator: u32 },
    #[error("support value {0} listed more than once")]
    DuplicateValue(i64),
    #[error("probability of support value {0} must be positive")]
    NonPositiveProb(i64),
    #[error("support must contain at least two points")]
    SingletonSupport,
    #[error("probabilities sum to {0}, expected 1")]
    ProbSumMismatch(String),
    #[error("support value {value} has no mirror {mirror} with equal probability")]
    AsymmetricSupport { value: u32, mirror: u32 },
    #[error("cannot parse probability {0:?}")]
    BadProbability(String),
    #[error("unknown distribution {0:?} (expected \"m1\", \"draw:<p>\" or a JSON file)")]
    UnknownName(String),
    #[error("malformed distribution file: {0}")]
    Malformed(String),
}

/// A probability given either as an exact rational or as a decimal.
#[derive(Debug, Clone, PartialEq)]
pub enum Prob {
    Exact(BigRational),
    Decimal(f64),
}

impl Prob {
    pub fn ratio(num: i64, den: i64) -> Self {
        Prob::Exact(BigRational::new(BigInt::from(num), BigInt::from(den)))
    }

    pub fn to_f64(&self) -> f64 {
        match self {
            Prob::Exact(r) => r.to_f64().unwrap_or(f64::NAN),
            Prob::Decimal(x) => *x,
        }
    }
}

impl FromStr for Prob {
    type Err = DistributionError;

    /// Accepts `"num/den"`, a plain integer, or a decimal literal.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DistributionError::BadProbability(s.to_string());
        let s = s.trim();
        if let Some((num, den)) = s.split_once('/') {
            let num: BigInt = num.trim().parse().map_err(|_| bad())?;
            let den: BigInt = den.trim().parse().map_err(|_| bad())?;
            if den.is_zero() {
                return Err(bad());
            }
            return Ok(Prob::Exact(BigRational::new(num, den)));
        }
        if let Ok(int) = s.parse::<BigInt>() {
            return Ok(Prob::Exact(BigRational::from_integer(int)));
        }
        let x: f64 = s.parse().map_err(|_| bad())?;
        if !x.is_finite() {
            return Err(bad());
        }
        Ok(Prob::Decimal(x))
    }
}

impl fmt::Display for Prob {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prob::Exact(r) => write!(f, "{}/{}", r.numer(), r.denom()),
            Prob::Decimal(x) => write!(f, "{x}"),
        }
    }
}

/// One match from the point of view of the lower-indexed player: they score
/// `a / q`, the opponent `(q - a) / q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchOutcome {
    pub a: u32,
    pub q: u32,
}

impl MatchOutcome {
    pub fn opponent(&self) -> u32 {
        self.q - self.a
    }
}

#[derive(Debug, Clone)]
enum Sampler {
    /// Every cumulative probability is a multiple of `2^-bits`: each draw
    /// consumes one `bits`-wide field of a random word.
    Table { bits: u32, values: Vec<u64> },
    /// One 64-bit word per draw, compared against `floor(cdf * 2^64)`.
    Inversion { cutoffs: Vec<u64> },
}

/// Validated score distribution D.
#[derive(Debug, Clone)]
pub struct ScoreDistribution {
    denominator: u32,
    support: Vec<u32>,
    probs: Vec<f64>,
    exact: Option<Vec<BigRational>>,
    label: String,
    sampler: Sampler,
}

impl ScoreDistribution {
    /// Validates `(value, prob)` entries over the lattice `{0, ..., denominator}`.
    pub fn new(denominator: u32, entries: &[(i64, Prob)]) -> Result<Self, DistributionError> {
        Self::build(denominator, entries, None)
    }

    fn build(
        denominator: u32,
        entries: &[(i64, Prob)],
        label: Option<String>,
    ) -> Result<Self, DistributionError> {
        if denominator == 0 {
            return Err(DistributionError::ZeroDenominator);
        }
        let mut sorted: Vec<(i64, Prob)> = entries.to_vec();
        sorted.sort_by_key(|(v, _)| *v);
        for (i, (value, prob)) in sorted.iter().enumerate() {
            if *value < 0 || *value > i64::from(denominator) {
                return Err(DistributionError::ValueOutOfRange {
                    value: *value,
                    denominator,
                });
            }
            if i > 0 && sorted[i - 1].0 == *value {
                return Err(DistributionError::DuplicateValue(*value));
            }
            let positive = match prob {
                Prob::Exact(r) => r.is_positive(),
                Prob::Decimal(x) => *x > 0.0,
            };
            if !positive {
                return Err(DistributionError::NonPositiveProb(*value));
            }
        }
        if sorted.len() < 2 {
            return Err(DistributionError::SingletonSupport);
        }

        let support: Vec<u32> = sorted.iter().map(|(v, _)| *v as u32).collect();
        let all_exact = sorted.iter().all(|(_, p)| matches!(p, Prob::Exact(_)));
        let exact = if all_exact {
            let rats: Vec<BigRational> = sorted
                .iter()
                .map(|(_, p)| match p {
                    Prob::Exact(r) => r.clone(),
                    Prob::Decimal(_) => unreachable!(),
                })
                .collect();
            let sum: BigRational = rats.iter().cloned().sum();
            if !sum.is_one() {
                return Err(DistributionError::ProbSumMismatch(format!(
                    "{}/{}",
                    sum.numer(),
                    sum.denom()
                )));
            }
            Some(rats)
        } else {
            let sum: f64 = sorted.iter().map(|(_, p)| p.to_f64()).sum();
            if (sum - 1.0).abs() > DECIMAL_TOLERANCE {
                return Err(DistributionError::ProbSumMismatch(sum.to_string()));
            }
            None
        };
        let probs: Vec<f64> = sorted.iter().map(|(_, p)| p.to_f64()).collect();

        // Mirror check: support[i] pairs with support[r - 1 - i].
        let r = support.len();
        for i in 0..r {
            let j = r - 1 - i;
            let mirror = denominator - support[i];
            let same = support[j] == mirror
                && match &exact {
                    Some(rats) => rats[i] == rats[j],
                    None => (probs[i] - probs[j]).abs() <= DECIMAL_TOLERANCE,
                };
            if !same {
                return Err(DistributionError::AsymmetricSupport {
                    value: support[i],
                    mirror,
                });
            }
        }

        let sampler = build_sampler(&support, &probs, exact.as_deref());
        let label = label.unwrap_or_else(|| {
            let body: Vec<String> = sorted.iter().map(|(v, p)| format!("{v}:{p}")).collect();
            format!("q={denominator}[{}]", body.join(","))
        });
        Ok(ScoreDistribution {
            denominator,
            support,
            probs,
            exact,
            label,
            sampler,
        })
    }

    /// Classical win/loss model: D = {0, 1} with probability 1/2 each.
    pub fn win_loss() -> Self {
        Self::build(
            1,
            &[(0, Prob::ratio(1, 2)), (1, Prob::ratio(1, 2))],
            Some("m1".into()),
        )
        .expect("win/loss model is valid")
    }

    /// Draw model on `q = 2`: a draw (1/2 point each) with probability
    /// `p_draw`, otherwise a decisive result with probability `(1 - p_draw)/2` each way.
    pub fn with_draws(p_draw: Prob) -> Result<Self, DistributionError> {
        let label = format!("draw:{p_draw}");
        let decisive = match &p_draw {
            Prob::Exact(p) => {
                Prob::Exact((BigRational::one() - p) / BigRational::from_integer(2.into()))
            }
            Prob::Decimal(p) => Prob::Decimal((1.0 - p) / 2.0),
        };
        let mut entries = vec![(0, decisive.clone()), (2, decisive)];
        let draw_is_zero = match &p_draw {
            Prob::Exact(p) => p.is_zero(),
            Prob::Decimal(p) => *p == 0.0,
        };
        if !draw_is_zero {
            entries.push((1, p_draw));
        }
        Self::build(2, &entries, Some(label))
    }

    /// Parses the command-line shorthands `m1` and `draw:<p>`.
    pub fn from_name(name: &str) -> Result<Self, DistributionError> {
        let name = name.trim();
        if name.eq_ignore_ascii_case("m1") {
            return Ok(Self::win_loss());
        }
        if let Some(p) = name.strip_prefix("draw:") {
            return Self::with_draws(p.parse()?);
        }
        Err(DistributionError::UnknownName(name.to_string()))
    }

    /// Parses the JSON distribution file format
    /// `{"denominator": q, "entries": [{"value": v, "prob": "num/den" | float}, ...]}`.
    pub fn from_json(text: &str) -> Result<Self, DistributionError> {
        let spec: DistributionFile =
            serde_json::from_str(text).map_err(|e| DistributionError::Malformed(e.to_string()))?;
        spec.into_distribution()
    }

    pub fn denominator(&self) -> u32 {
        self.denominator
    }

    pub fn support(&self) -> &[u32] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Exact probabilities, when every probability was given as a rational.
    pub fn exact_probs(&self) -> Option<&[BigRational]> {
        self.exact.as_deref()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Mean and variance of a single match score in units of one point.
    pub fn mean_variance(&self) -> (f64, f64) {
        if let Some((mu, var)) = self.mean_variance_exact() {
            return (mu.to_f64().unwrap(), var.to_f64().unwrap());
        }
        let q = f64::from(self.denominator);
        let mean: f64 = self.iter().map(|(v, p)| p * f64::from(v) / q).sum();
        let var: f64 = self
            .iter()
            .map(|(v, p)| {
                let d = f64::from(v) / q - 0.5;
                p * d * d
            })
            .sum();
        (mean, var)
    }

    /// Exact mean and variance; `None` for decimal distributions.
    pub fn mean_variance_exact(&self) -> Option<(BigRational, BigRational)> {
        let rats = self.exact.as_ref()?;
        let q = BigRational::from_integer(self.denominator.into());
        let half = BigRational::new(1.into(), 2.into());
        let mut mean = BigRational::zero();
        let mut var = BigRational::zero();
        for (&v, p) in self.support.iter().zip(rats) {
            let x = BigRational::from_integer(v.into()) / &q;
            let d = &x - &half;
            mean += p * &x;
            var += p * &d * &d;
        }
        Some((mean, var))
    }

    /// Standard deviation of a single match score.
    pub fn sigma(&self) -> f64 {
        self.mean_variance().1.sqrt()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.support.iter().copied().zip(self.probs.iter().copied())
    }

    /// Draws `opponents.len()` matches for one player. Each slot receives the
    /// opponent's share `q - a`; the return value is the player's total `Σ a`.
    pub(crate) fn accumulate_row<R: RngCore>(&self, rng: &mut R, opponents: &mut [u64]) -> u64 {
        let q = u64::from(self.denominator);
        match &self.sampler {
            Sampler::Table { bits: 1, values } => {
                let (lo, hi) = (values[0], values[1]);
                let step = hi - lo;
                let mut total = 0;
                for chunk in opponents.chunks_mut(64) {
                    let word = rng.next_u64();
                    let used = if chunk.len() == 64 {
                        word
                    } else {
                        word & ((1u64 << chunk.len()) - 1)
                    };
                    total += lo * chunk.len() as u64 + step * u64::from(used.count_ones());
                    let base = q - lo;
                    for (k, slot) in chunk.iter_mut().enumerate() {
                        *slot += base - step * ((word >> k) & 1);
                    }
                }
                total
            }
            Sampler::Table { bits, values } => {
                let bits = *bits;
                let mask = (1u64 << bits) - 1;
                let fields = (64 / bits) as usize;
                let mut total = 0;
                for chunk in opponents.chunks_mut(fields) {
                    let word = rng.next_u64();
                    for (k, slot) in chunk.iter_mut().enumerate() {
                        let a = values[((word >> (k as u32 * bits)) & mask) as usize];
                        *slot += q - a;
                        total += a;
                    }
                }
                total
            }
            Sampler::Inversion { cutoffs } => {
                let mut total = 0;
                for slot in opponents.iter_mut() {
                    let u = rng.next_u64();
                    let a = u64::from(self.support[cutoffs.partition_point(|&c| c <= u)]);
                    *slot += q - a;
                    total += a;
                }
                total
            }
        }
    }

    /// Draws one match outcome.
    pub fn sample_match(&self, stream: &mut RandomStream) -> MatchOutcome {
        let mut opponent = [0u64];
        let a = self.accumulate_row(stream.rng(), &mut opponent);
        MatchOutcome {
            a: a as u32,
            q: self.denominator,
        }
    }
}

impl PartialEq for ScoreDistribution {
    fn eq(&self, other: &Self) -> bool {
        self.denominator == other.denominator
            && self.support == other.support
            && self.probs == other.probs
            && self.exact == other.exact
    }
}

fn build_sampler(support: &[u32], probs: &[f64], exact: Option<&[BigRational]>) -> Sampler {
    let r = support.len();
    if let Some(rats) = exact {
        let mut cdf = BigRational::zero();
        let mut cdfs = Vec::with_capacity(r);
        for p in rats {
            cdf += p;
            cdfs.push(cdf.clone());
        }
        // Smallest b with every cdf a multiple of 2^-b: the denominators are powers of two.
        let table_bits = cdfs
            .iter()
            .map(|c| {
                let den = c.denom();
                let tz = den.trailing_zeros().unwrap_or(0);
                if *den == BigInt::one() << tz {
                    Some(tz as u32)
                } else {
                    None
                }
            })
            .try_fold(0u32, |acc, b| b.map(|b| acc.max(b)));
        if let Some(bits) = table_bits.filter(|&b| (1..=MAX_TABLE_BITS).contains(&b)) {
            let mut values = Vec::with_capacity(1 << bits);
            let scale = BigInt::one() << bits;
            let mut idx = 0;
            for field in 0..(1u64 << bits) {
                while BigRational::from_integer(BigInt::from(field)) >= &cdfs[idx] * &scale {
                    idx += 1;
                }
                values.push(u64::from(support[idx]));
            }
            return Sampler::Table { bits, values };
        }
        let two64 = BigInt::one() << 64u32;
        let cutoffs = cdfs[..r - 1]
            .iter()
            .map(|c| {
                ((c.numer() * &two64) / c.denom())
                    .to_u64()
                    .unwrap_or(u64::MAX)
            })
            .collect();
        return Sampler::Inversion { cutoffs };
    }
    let mut cdf = 0.0;
    let cutoffs = probs[..r - 1]
        .iter()
        .map(|p| {
            cdf += p;
            // Saturating float-to-int conversion.
            (cdf * 18_446_744_073_709_551_616.0) as u64
        })
        .collect();
    Sampler::Inversion { cutoffs }
}

/// Serialized form of a distribution file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionFile {
    pub denominator: u32,
    pub entries: Vec<DistributionEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionEntry {
    pub value: i64,
    pub prob: ProbField,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProbField {
    Text(String),
    Number(f64),
}

impl DistributionFile {
    pub fn into_distribution(self) -> Result<ScoreDistribution, DistributionError> {
        let entries = self
            .entries
            .into_iter()
            .map(|e| {
                let prob = match e.prob {
                    ProbField::Text(s) => s.parse()?,
                    ProbField::Number(x) => Prob::Decimal(x),
                };
                Ok((e.value, prob))
            })
            .collect::<Result<Vec<_>, DistributionError>>()?;
        ScoreDistribution::new(self.denominator, &entries)
    }
}

impl From<&ScoreDistribution> for DistributionFile {
    fn from(d: &ScoreDistribution) -> Self {
        let entries = d
            .support
            .iter()
            .enumerate()
            .map(|(i, &v)| DistributionEntry {
                value: i64::from(v),
                prob: match &d.exact {
                    Some(rats) => {
                        ProbField::Text(format!("{}/{}", rats[i].numer(), rats[i].denom()))
                    }
                    None => ProbField::Number(d.probs[i]),
                },
            })
            .collect();
        DistributionFile {
            denominator: d.denominator,
            entries,
        }
    }
}

//! Exact enumeration of every tournament outcome for tiny `n`.
//!
//! Each of the `C(n,2)` pairs takes one of the `r` support values; an outcome
//! has probability `prod c_i / D^{C(n,2)}` where `c_i = p_i D` over the common
//! denominator `D`. Weights are accumulated as integers and turned into
//! rationals once at the end, so every reported value is exact.

use std::collections::HashMap;
use std::ops::{AddAssign, Mul};

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::distributions::ScoreDistribution;
use crate::engine::{EngineError, ScoreVector};
use crate::experiments::{run_replications, ExperimentError, Tally};
use crate::statistics::{summary_bottom_k_distinct, summary_top_k_distinct, ScoreSummary};

/// Largest number of outcomes `r^{C(n,2)}` the oracle will enumerate.
pub const MAX_OUTCOMES: u64 = 100_000_000;
/// Estimates further than this many standard errors from the exact value are flagged.
pub const Z_FLAG: f64 = 4.0;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("{outcomes} outcomes exceed the enumeration limit {limit}")]
    StateSpaceTooLarge { outcomes: String, limit: u64 },
    #[error("exact enumeration requires rational probabilities")]
    InexactProbabilities,
    #[error("experiment needs at least one replication")]
    EmptyExperiment,
    #[error("k = {k} is outside 1..={n}")]
    KOutOfRange { k: usize, n: usize },
    #[error("threshold {t} is outside the attainable range [-1, {max}]")]
    ThresholdOutOfRange { t: i64, max: i64 },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
}

/// Exact moments of the threshold observables at one scaled threshold `T`
/// (scores count when `s > T`).
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdStats {
    pub t_scaled: i64,
    /// Representative threshold in points, `(T + 1/2) / q`.
    pub t: BigRational,
    pub mean_z: BigRational,
    pub var_z: BigRational,
    pub mean_w: BigRational,
    pub var_w: BigRational,
    /// `P(s_1 > T)`.
    pub p_i1: BigRational,
    pub cov_i1_i2: BigRational,
    pub p_w_positive: BigRational,
    /// Index `k - 1`: `P(Z_T < k)`.
    pub p_z_below: Vec<BigRational>,
    /// Index `k - 1`: `P(Z_T >= k and W_T = 0)`.
    pub p_containment: Vec<BigRational>,
}

/// Exact values of every observable for one `(D, n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactReport {
    pub n: usize,
    pub q: u32,
    pub dist: String,
    pub outcomes: u64,
    /// Index `k - 1`: `P(U_{n,k})`.
    pub p_top: Vec<BigRational>,
    /// Index `k - 1`: `P(Ũ_{n,k})`.
    pub p_bottom: Vec<BigRational>,
    /// One entry per `T` in `-1..=q(n-1)`.
    pub thresholds: Vec<ThresholdStats>,
}

impl ExactReport {
    pub fn p_top(&self, k: usize) -> &BigRational {
        &self.p_top[k - 1]
    }

    pub fn p_bottom(&self, k: usize) -> &BigRational {
        &self.p_bottom[k - 1]
    }

    pub fn threshold(&self, t_scaled: i64) -> Option<&ThresholdStats> {
        self.thresholds.iter().find(|s| s.t_scaled == t_scaled)
    }

    /// JSON rendering with every rational as `"num/den"`.
    pub fn to_json(&self) -> Value {
        let mut obj = Map::new();
        obj.insert("n".into(), json!(self.n));
        obj.insert("q".into(), json!(self.q));
        obj.insert("dist".into(), json!(self.dist));
        obj.insert("outcomes".into(), json!(self.outcomes));
        for (i, p) in self.p_top.iter().enumerate() {
            obj.insert(format!("P_U[{}]", i + 1), json!(render(p)));
        }
        for (i, p) in self.p_bottom.iter().enumerate() {
            obj.insert(format!("P_Utilde[{}]", i + 1), json!(render(p)));
        }
        let rows: Vec<Value> = self
            .thresholds
            .iter()
            .map(|s| {
                json!({
                    "t_scaled": s.t_scaled,
                    "t": render(&s.t),
                    "E_Z": render(&s.mean_z),
                    "Var_Z": render(&s.var_z),
                    "E_W": render(&s.mean_w),
                    "Var_W": render(&s.var_w),
                    "P_I1": render(&s.p_i1),
                    "Cov_I1_I2": render(&s.cov_i1_i2),
                    "P_W_gt_0": render(&s.p_w_positive),
                    "P_Z_lt_k": s.p_z_below.iter().map(render).collect::<Vec<_>>(),
                    "P_Z_ge_k_and_W_eq_0": s.p_containment.iter().map(render).collect::<Vec<_>>(),
                })
            })
            .collect();
        obj.insert("thresholds".into(), Value::Array(rows));
        Value::Object(obj)
    }
}

/// Renders a rational as `"num/den"`.
pub fn render(r: &BigRational) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

/// Integer weight accumulator: `u128` when `D^{C(n,2)}` fits, `BigUint` otherwise.
trait Weight: Clone + Zero + One + AddAssign + for<'a> Mul<&'a Self, Output = Self> {
    fn from_big(v: &BigUint) -> Self;
    fn to_big(&self) -> BigUint;
}

impl Weight for u128 {
    fn from_big(v: &BigUint) -> Self {
        v.to_u128().expect("weight fits in u128")
    }
    fn to_big(&self) -> BigUint {
        BigUint::from(*self)
    }
}

impl Weight for BigUint {
    fn from_big(v: &BigUint) -> Self {
        v.clone()
    }
    fn to_big(&self) -> BigUint {
        self.clone()
    }
}

/// Raw enumeration result: weights per sorted score vector and per `(s_1, s_2)`.
struct Tables<W> {
    by_sorted: HashMap<Vec<u64>, W>,
    by_first_two: HashMap<(u64, u64), W>,
}

fn enumerate<W: Weight>(n: usize, q: u64, support: &[u64], weights: &[BigUint]) -> Tables<W> {
    let weights: Vec<W> = weights.iter().map(W::from_big).collect();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    let mut tables = Tables {
        by_sorted: HashMap::new(),
        by_first_two: HashMap::new(),
    };
    let mut scores = vec![0u64; n];
    let mut sorted = vec![0u64; n];
    // Mixed-radix counter with one digit per pair.
    let mut digits = vec![0usize; pairs.len()];
    let mut prefix: Vec<W> = vec![W::one(); pairs.len() + 1];
    let mut depth = 0;
    loop {
        while depth < pairs.len() {
            let (i, j) = pairs[depth];
            let a = support[digits[depth]];
            scores[i] += a;
            scores[j] += q - a;
            prefix[depth + 1] = prefix[depth].clone() * &weights[digits[depth]];
            depth += 1;
        }
        let w = &prefix[depth];
        sorted.copy_from_slice(&scores);
        sorted.sort_unstable();
        match tables.by_sorted.get_mut(&sorted) {
            Some(acc) => *acc += w.clone(),
            None => {
                tables.by_sorted.insert(sorted.clone(), w.clone());
            }
        }
        *tables
            .by_first_two
            .entry((scores[0], scores[1]))
            .or_insert_with(W::zero) += w.clone();

        // Advance the counter, undoing the digits that roll over.
        loop {
            if depth == 0 {
                return tables;
            }
            depth -= 1;
            let (i, j) = pairs[depth];
            let a = support[digits[depth]];
            scores[i] -= a;
            scores[j] -= q - a;
            digits[depth] += 1;
            if digits[depth] < support.len() {
                break;
            }
            digits[depth] = 0;
        }
    }
}

/// Enumerates all `r^{C(n,2)}` outcomes and reports every observable exactly.
pub fn enumerate_exact(d: &ScoreDistribution, n: usize) -> Result<ExactReport, OracleError> {
    if n < 2 {
        return Err(EngineError::PlayerCountTooSmall(n).into());
    }
    let probs = d.exact_probs().ok_or(OracleError::InexactProbabilities)?;
    let pairs = (n * (n - 1) / 2) as u32;
    let r = d.support().len() as u64;
    let outcomes = BigUint::from(r).pow(pairs);
    if outcomes > BigUint::from(MAX_OUTCOMES) {
        return Err(OracleError::StateSpaceTooLarge {
            outcomes: outcomes.to_string(),
            limit: MAX_OUTCOMES,
        });
    }

    let common = probs
        .iter()
        .fold(BigInt::one(), |acc, p| acc.lcm(p.denom()));
    let weights: Vec<BigUint> = probs
        .iter()
        .map(|p| {
            (p.numer() * (&common / p.denom()))
                .to_biguint()
                .expect("positive")
        })
        .collect();
    let common = common.to_biguint().expect("positive");
    let total = common.pow(pairs);

    let q = u64::from(d.denominator());
    let support: Vec<u64> = d.support().iter().map(|&v| u64::from(v)).collect();
    let (by_sorted, by_first_two) = if total.bits() < 127 {
        let t = enumerate::<u128>(n, q, &support, &weights);
        (to_big_map(t.by_sorted), to_big_map(t.by_first_two))
    } else {
        let t = enumerate::<BigUint>(n, q, &support, &weights);
        (t.by_sorted, t.by_first_two)
    };

    let total = BigInt::from(total);
    let prob = |w: &BigUint| BigRational::new(BigInt::from(w.clone()), total.clone());

    let summaries: Vec<(ScoreSummary, &BigUint)> = by_sorted
        .iter()
        .map(|(s, w)| {
            (
                ScoreSummary {
                    q: d.denominator(),
                    sorted: s.clone(),
                },
                w,
            )
        })
        .collect();

    let mut p_top = Vec::with_capacity(n);
    let mut p_bottom = Vec::with_capacity(n);
    for k in 1..=n {
        let mut top = BigUint::zero();
        let mut bottom = BigUint::zero();
        for (s, w) in &summaries {
            if summary_top_k_distinct(s, k) {
                top += *w;
            }
            if summary_bottom_k_distinct(s, k) {
                bottom += *w;
            }
        }
        p_top.push(prob(&top));
        p_bottom.push(prob(&bottom));
    }

    let max = q as i64 * (n as i64 - 1);
    let mut thresholds = Vec::with_capacity(max as usize + 2);
    for t in -1..=max {
        let mut z1 = BigUint::zero();
        let mut z2 = BigUint::zero();
        let mut w1 = BigUint::zero();
        let mut w2 = BigUint::zero();
        let mut w_pos = BigUint::zero();
        let mut z_below = vec![BigUint::zero(); n];
        let mut contained = vec![BigUint::zero(); n];
        for (s, w) in &summaries {
            let sv =
                ScoreVector::new(s.q, s.sorted.clone()).expect("enumerated scores are in range");
            let z = crate::statistics::count_exceed(&sv, t) as u64;
            let ties = crate::statistics::count_tied_pairs_above(&sv, t);
            z1 += *w * z;
            z2 += *w * (z * z);
            w1 += *w * ties;
            w2 += *w * (ties * ties);
            if ties > 0 {
                w_pos += *w;
            }
            for k in 1..=n {
                if (z as usize) < k {
                    z_below[k - 1] += *w;
                } else if ties == 0 {
                    contained[k - 1] += *w;
                }
            }
        }
        let mut p1 = BigUint::zero();
        let mut p2 = BigUint::zero();
        let mut p12 = BigUint::zero();
        for (&(a, b), w) in &by_first_two {
            let (ia, ib) = (a as i64 > t, b as i64 > t);
            if ia {
                p1 += w;
            }
            if ib {
                p2 += w;
            }
            if ia && ib {
                p12 += w;
            }
        }
        let mean_z = prob(&z1);
        let mean_w = prob(&w1);
        let var_z = prob(&z2) - &mean_z * &mean_z;
        let var_w = prob(&w2) - &mean_w * &mean_w;
        let cov = prob(&p12) - prob(&p1) * prob(&p2);
        thresholds.push(ThresholdStats {
            t_scaled: t,
            t: BigRational::new(BigInt::from(2 * t + 1), BigInt::from(2 * q)),
            mean_z,
            var_z,
            mean_w,
            var_w,
            p_i1: prob(&p1),
            cov_i1_i2: cov,
            p_w_positive: prob(&w_pos),
            p_z_below: z_below.iter().map(&prob).collect(),
            p_containment: contained.iter().map(&prob).collect(),
        });
    }

    Ok(ExactReport {
        n,
        q: d.denominator(),
        dist: d.label().to_string(),
        outcomes: outcomes.to_u64().expect("bounded by the guard"),
        p_top,
        p_bottom,
        thresholds,
    })
}

fn to_big_map<K: std::hash::Hash + Eq>(m: HashMap<K, u128>) -> HashMap<K, BigUint> {
    m.into_iter().map(|(k, v)| (k, v.to_big())).collect()
}

/// One estimator compared against its exact value.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ComparisonEntry {
    pub name: String,
    pub exact: String,
    pub exact_value: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub z: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ComparisonRecord {
    pub dist: String,
    pub n: usize,
    pub k: usize,
    pub t_scaled: i64,
    pub replications: u64,
    pub seed: u64,
    pub entries: Vec<ComparisonEntry>,
}

impl ComparisonRecord {
    pub fn flagged(&self) -> impl Iterator<Item = &ComparisonEntry> {
        self.entries.iter().filter(|e| e.flagged)
    }

    pub fn max_abs_z(&self) -> f64 {
        self.entries.iter().map(|e| e.z.abs()).fold(0.0, f64::max)
    }
}

fn entry(name: &str, exact: &BigRational, estimate: f64, std_error: f64) -> ComparisonEntry {
    let exact_value = exact.to_f64().unwrap_or(f64::NAN);
    let diff = estimate - exact_value;
    let z = if std_error > 0.0 {
        diff / std_error
    } else if diff.abs() <= 1e-12 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    };
    ComparisonEntry {
        name: name.to_string(),
        exact: render(exact),
        exact_value,
        estimate,
        std_error,
        z,
        flagged: z.abs() > Z_FLAG,
    }
}

fn proportion(name: &str, exact: &BigRational, hits: u64, reps: u64) -> ComparisonEntry {
    let p = exact.to_f64().unwrap_or(f64::NAN);
    entry(
        name,
        exact,
        hits as f64 / reps as f64,
        (p * (1.0 - p) / reps as f64).sqrt(),
    )
}

/// Runs `replications` Monte Carlo tournaments and reports the z-score of
/// every estimator against the exact oracle value.
pub fn oracle_vs_montecarlo(
    d: &ScoreDistribution,
    n: usize,
    k: usize,
    t_scaled: i64,
    replications: u64,
    seed: u64,
    workers: usize,
) -> Result<ComparisonRecord, OracleError> {
    if replications == 0 {
        return Err(OracleError::EmptyExperiment);
    }
    let report = enumerate_exact(d, n)?;
    compare_with_report(&report, d, k, t_scaled, replications, seed, workers)
}

/// [`oracle_vs_montecarlo`] against an already computed report.
pub fn compare_with_report(
    report: &ExactReport,
    d: &ScoreDistribution,
    k: usize,
    t_scaled: i64,
    replications: u64,
    seed: u64,
    workers: usize,
) -> Result<ComparisonRecord, OracleError> {
    if replications == 0 {
        return Err(OracleError::EmptyExperiment);
    }
    let n = report.n;
    if k == 0 || k > n {
        return Err(OracleError::KOutOfRange { k, n });
    }
    let stats = report
        .threshold(t_scaled)
        .ok_or(OracleError::ThresholdOutOfRange {
            t: t_scaled,
            max: i64::from(report.q) * (n as i64 - 1),
        })?;
    let tally: Tally = run_replications(d, n, k, Some(t_scaled), replications, seed, workers)?;
    let r = replications as f64;
    let (z_mean, _) = tally.z_moments().expect("threshold active");
    let (w_mean, _) = tally.w_moments().expect("threshold active");
    let sd = |v: &BigRational| (v.to_f64().unwrap_or(0.0).max(0.0) / r).sqrt();
    let entries = vec![
        proportion("P_U", report.p_top(k), tally.top_distinct, replications),
        proportion(
            "P_Utilde",
            report.p_bottom(k),
            tally.bottom_distinct,
            replications,
        ),
        entry("E_Z", &stats.mean_z, z_mean, sd(&stats.var_z)),
        entry("E_W", &stats.mean_w, w_mean, sd(&stats.var_w)),
        proportion(
            "P_Z_lt_k",
            &stats.p_z_below[k - 1],
            tally.z_below_k,
            replications,
        ),
        proportion(
            "P_W_gt_0",
            &stats.p_w_positive,
            tally.w_positive,
            replications,
        ),
        proportion(
            "P_G",
            &stats.p_containment[k - 1],
            tally.containment,
            replications,
        ),
    ];
    Ok(ComparisonRecord {
        dist: report.dist.clone(),
        n,
        k,
        t_scaled,
        replications,
        seed,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::Prob;

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    fn draw_half() -> ScoreDistribution {
        ScoreDistribution::with_draws(Prob::ratio(1, 2)).unwrap()
    }

    #[test]
    fn three_player_win_loss() {
        let rep = enumerate_exact(&ScoreDistribution::win_loss(), 3).unwrap();
        assert_eq!(rep.outcomes, 8);
        assert_eq!(rep.p_top(1), &rat(1, 1));
        assert_eq!(rep.p_top(2), &rat(3, 4));
        let half = rep.threshold(0).unwrap();
        assert_eq!(half.t, rat(1, 2));
        assert_eq!(half.mean_z, rat(9, 4));
        assert_eq!(half.mean_w, rat(3, 4));
        let upper = rep.threshold(1).unwrap();
        assert_eq!(upper.t, rat(3, 2));
        assert_eq!(upper.p_i1, rat(1, 4));
        assert_eq!(upper.cov_i1_i2, rat(-1, 16));
    }

    /// Independent check: enumerate the 8 tournaments by hand-rolled bit masks.
    #[test]
    fn matches_bitmask_enumeration() {
        let rep = enumerate_exact(&ScoreDistribution::win_loss(), 4).unwrap();
        assert_eq!(rep.outcomes, 64);
        let pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
        let mut top2 = 0;
        let mut z_at_1 = 0;
        for mask in 0u32..64 {
            let mut s = [0u64; 4];
            for (b, &(i, j)) in pairs.iter().enumerate() {
                if mask >> b & 1 == 1 {
                    s[i] += 1
                } else {
                    s[j] += 1
                }
            }
            let mut sorted = s;
            sorted.sort_unstable();
            if sorted[3] != sorted[2] {
                top2 += 1;
            }
            z_at_1 += s.iter().filter(|&&x| x > 1).count();
        }
        assert_eq!(rep.p_top(2), &rat(top2, 64));
        assert_eq!(rep.threshold(1).unwrap().mean_z, rat(z_at_1 as i64, 64));
    }

    #[test]
    fn probabilities_are_valid() {
        for d in [ScoreDistribution::win_loss(), draw_half()] {
            for n in 2..=4 {
                let rep = enumerate_exact(&d, n).unwrap();
                let zero = BigRational::zero();
                let one = BigRational::one();
                assert_eq!(rep.p_top(1), &one);
                for p in rep.p_top.iter().chain(&rep.p_bottom) {
                    assert!(*p >= zero && *p <= one);
                }
                // Below every score Z = n; above every score Z = 0.
                assert_eq!(
                    rep.threshold(-1).unwrap().mean_z,
                    BigRational::from_integer(n.into())
                );
                let top = rep.thresholds.last().unwrap();
                assert_eq!(top.mean_z, zero);
                assert_eq!(top.mean_w, zero);
            }
        }
    }

    #[test]
    fn guards() {
        let d = ScoreDistribution::from_name("draw:0.5").unwrap();
        assert!(matches!(
            enumerate_exact(&d, 3),
            Err(OracleError::InexactProbabilities)
        ));
        assert!(matches!(
            enumerate_exact(&ScoreDistribution::win_loss(), 8),
            Err(OracleError::StateSpaceTooLarge { .. })
        ));
        assert!(matches!(
            oracle_vs_montecarlo(&ScoreDistribution::win_loss(), 3, 2, 0, 0, 1, 1),
            Err(OracleError::EmptyExperiment)
        ));
    }

    #[test]
    fn bignum_path_agrees() {
        // Denominator 3^9 keeps u128; the weights below force the BigUint path.
        let d = ScoreDistribution::new(
            2,
            &[
                (0, Prob::ratio(1_000_003, 4_000_000)),
                (1, Prob::ratio(999_997, 2_000_000)),
                (2, Prob::ratio(1_000_003, 4_000_000)),
            ],
        )
        .unwrap();
        let rep = enumerate_exact(&d, 4).unwrap();
        let total: BigRational = rep.threshold(-1).unwrap().mean_z.clone();
        assert_eq!(total, BigRational::from_integer(4.into()));
        assert_eq!(rep.p_top(2), rep.p_bottom(2));
    }

    #[test]
    fn json_rendering() {
        let rep = enumerate_exact(&ScoreDistribution::win_loss(), 3).unwrap();
        let text = serde_json::to_string_pretty(&rep.to_json()).unwrap();
        assert!(text.contains("\"P_U[2]\": \"3/4\""));
        assert!(text.contains("\"Cov_I1_I2\": \"-1/16\""));
    }

    #[test]
    fn small_monte_carlo_comparison() {
        let rec =
            oracle_vs_montecarlo(&ScoreDistribution::win_loss(), 3, 2, 0, 20_000, 5, 1).unwrap();
        assert_eq!(rec.entries.len(), 7);
        assert_eq!(rec.flagged().count(), 0, "{rec:?}");
    }
}

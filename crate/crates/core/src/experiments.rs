//! Seeded Monte Carlo estimation of `P(U_{n,k})` and the threshold moments.
//!
//! Replication `i` always draws from `RandomStream::new(seed, i)`, and every
//! per-replication quantity is an integer, so totals are exact sums and the
//! results are bit-identical for any worker count.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asymptotics::{
    k_schedule, normal_upper_quantile, thresholds, AsymptoticsError, DEFAULT_DELTA,
};
use crate::distributions::{DistributionError, DistributionFile, ScoreDistribution};
use crate::engine::{simulate_scores, EngineError, RandomStream};
use crate::statistics::{
    bottom_k_distinct, count_exceed, count_tied_pairs_above, scaled_threshold, top_k_distinct,
    StatisticsError,
};

/// Normal quantile for two-sided 95% intervals.
pub const Z_95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("invalid counts: {successes} successes out of {trials}")]
    InvalidCounts { successes: u64, trials: u64 },
    #[error("confidence level must lie in (0, 1), got {0}")]
    InvalidLevel(f64),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Statistics(#[from] StatisticsError),
    #[error(transparent)]
    Thresholds(#[from] AsymptoticsError),
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(
    successes: u64,
    trials: u64,
    level: f64,
) -> Result<(f64, f64), ExperimentError> {
    if trials == 0 || successes > trials {
        return Err(ExperimentError::InvalidCounts { successes, trials });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(ExperimentError::InvalidLevel(level));
    }
    let z = if level == 0.95 {
        Z_95
    } else {
        normal_upper_quantile((1.0 - level) / 2.0)
    };
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let low = if successes == 0 {
        0.0
    } else {
        (center - half).clamp(0.0, p)
    };
    let high = if successes == trials {
        1.0
    } else {
        (center + half).clamp(p, 1.0)
    };
    Ok((low, high))
}

/// Integer totals over a batch of replications.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Tally {
    pub replications: u64,
    pub top_distinct: u64,
    pub bottom_distinct: u64,
    pub threshold_active: bool,
    pub z_sum: u128,
    pub z_sq_sum: u128,
    pub w_sum: u128,
    pub w_sq_sum: u128,
    /// Replications with `Z_t < k`.
    pub z_below_k: u64,
    /// Replications with `W_n(t) > 0`.
    pub w_positive: u64,
    /// Replications with `Z_t >= k` and `W_n(t) = 0`.
    pub containment: u64,
    /// Replications in the containment event where the top `k` were not distinct.
    pub containment_violations: u64,
    pub conservation_violations: u64,
}

impl Tally {
    fn merge(mut self, o: Tally) -> Tally {
        self.replications += o.replications;
        self.top_distinct += o.top_distinct;
        self.bottom_distinct += o.bottom_distinct;
        self.threshold_active |= o.threshold_active;
        self.z_sum += o.z_sum;
        self.z_sq_sum += o.z_sq_sum;
        self.w_sum += o.w_sum;
        self.w_sq_sum += o.w_sq_sum;
        self.z_below_k += o.z_below_k;
        self.w_positive += o.w_positive;
        self.containment += o.containment;
        self.containment_violations += o.containment_violations;
        self.conservation_violations += o.conservation_violations;
        self
    }

    /// Sample mean and unbiased sample variance from integer sums.
    fn moments(&self, sum: u128, sq_sum: u128) -> Option<(f64, f64)> {
        if !self.threshold_active || self.replications == 0 {
            return None;
        }
        let r = self.replications as f64;
        let mean = sum as f64 / r;
        let var = if self.replications > 1 {
            let r128 = u128::from(self.replications);
            // R * sum_sq - sum^2 is an exact non-negative integer.
            (r128 * sq_sum - sum * sum) as f64 / (r * (r - 1.0))
        } else {
            0.0
        };
        Some((mean, var))
    }

    pub fn z_moments(&self) -> Option<(f64, f64)> {
        self.moments(self.z_sum, self.z_sq_sum)
    }

    pub fn w_moments(&self) -> Option<(f64, f64)> {
        self.moments(self.w_sum, self.w_sq_sum)
    }
}

fn replicate(
    d: &ScoreDistribution,
    n: usize,
    k: usize,
    t: Option<i64>,
    seed: u64,
    stream_id: u64,
) -> Result<Tally, ExperimentError> {
    let v = simulate_scores(d, n, &mut RandomStream::new(seed, stream_id))?;
    let top = top_k_distinct(&v, k)?;
    let mut tally = Tally {
        replications: 1,
        top_distinct: u64::from(top),
        bottom_distinct: u64::from(bottom_k_distinct(&v, k)?),
        conservation_violations: u64::from(!v.is_conserved()),
        ..Tally::default()
    };
    if let Some(t) = t {
        let z = count_exceed(&v, t) as u128;
        let w = u128::from(count_tied_pairs_above(&v, t));
        let g = z >= k as u128 && w == 0;
        tally.threshold_active = true;
        tally.z_sum = z;
        tally.z_sq_sum = z * z;
        tally.w_sum = w;
        tally.w_sq_sum = w * w;
        tally.z_below_k = u64::from(z < k as u128);
        tally.w_positive = u64::from(w > 0);
        tally.containment = u64::from(g);
        tally.containment_violations = u64::from(g && !top);
    }
    Ok(tally)
}

/// Runs replications `0..replications` of `(d, n)` on `workers` threads.
pub fn run_replications(
    d: &ScoreDistribution,
    n: usize,
    k: usize,
    t: Option<i64>,
    replications: u64,
    seed: u64,
    workers: usize,
) -> Result<Tally, ExperimentError> {
    if n < 2 {
        return Err(EngineError::PlayerCountTooSmall(n).into());
    }
    if k == 0 || k > n {
        return Err(StatisticsError::KOutOfRange { k, n }.into());
    }
    let empty = Tally {
        threshold_active: t.is_some(),
        ..Tally::default()
    };
    if workers <= 1 {
        return (0..replications).try_fold(empty, |acc, id| {
            Ok(acc.merge(replicate(d, n, k, t, seed, id)?))
        });
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| {
            ExperimentError::InvalidConfig(format!("cannot start {workers} workers: {e}"))
        })?;
    pool.install(|| {
        (0..replications)
            .into_par_iter()
            .map(|id| replicate(d, n, k, t, seed, id))
            .try_reduce(|| empty.clone(), |a, b| Ok(a.merge(b)))
    })
}

/// How `k` is chosen for each `n` of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KRule {
    Fixed(u64),
    Schedule { damping: f64 },
}

impl KRule {
    pub fn k_for(&self, n: u64) -> Result<u64, ExperimentError> {
        let k = match self {
            KRule::Fixed(k) => *k,
            KRule::Schedule { damping } => k_schedule(n as f64, *damping)?,
        };
        Ok(k.min(n))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// `t_{n,k}` from the threshold solver.
    Solved,
    /// A fixed threshold in points.
    Explicit(f64),
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DistributionSpec {
    Name(String),
    Inline(DistributionFile),
}

impl DistributionSpec {
    pub fn resolve(&self) -> Result<ScoreDistribution, DistributionError> {
        match self {
            DistributionSpec::Name(name) => ScoreDistribution::from_name(name),
            DistributionSpec::Inline(file) => file.clone().into_distribution(),
        }
    }
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

fn default_workers() -> usize {
    1
}

fn default_threshold() -> ThresholdMode {
    ThresholdMode::Solved
}

/// Experiment configuration; also the JSON config file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub distribution: DistributionSpec,
    pub n_grid: Vec<u64>,
    pub k_rule: KRule,
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub replications: u64,
    pub seed: u64,
    #[serde(default = "default_threshold")]
    pub threshold: ThresholdMode,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |msg: String| Err(ExperimentError::InvalidConfig(msg));
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if self.n_grid.is_empty() {
            return bad("n grid is empty".into());
        }
        if let Some(&n) = self.n_grid.iter().find(|&&n| n < 2) {
            return bad(format!("every n must be at least 2, got {n}"));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad("n grid must be strictly increasing".into());
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        match &self.k_rule {
            KRule::Fixed(0) => return bad("k must be at least 1".into()),
            KRule::Schedule { damping } if damping.is_nan() || *damping < 1.0 => {
                return bad(format!("damping must be at least 1, got {damping}"))
            }
            _ => {}
        }
        if let ThresholdMode::Explicit(t) = self.threshold {
            if !t.is_finite() {
                return bad("explicit threshold must be finite".into());
            }
        }
        Ok(())
    }
}

/// One row of an experiment table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateResult {
    pub n: u64,
    pub k: u64,
    pub delta: f64,
    pub t_scaled: Option<i64>,
    pub replications: u64,
    pub successes: u64,
    pub phat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub z_mean: Option<f64>,
    pub z_var: Option<f64>,
    pub w_mean: Option<f64>,
    pub w_var: Option<f64>,
    pub p_z_lt_k: Option<f64>,
    pub p_w_gt_0: Option<f64>,
    /// Empirical `P(Z_t >= k and W = 0)`.
    pub p_containment: Option<f64>,
    pub bottom_successes: u64,
    pub seed: u64,
    pub elapsed_ms: u128,
}

impl EstimateResult {
    pub fn ci_width(&self) -> f64 {
        self.ci_high - self.ci_low
    }
}

/// Validated config with its distribution resolved.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub distribution: ScoreDistribution,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self, ExperimentError> {
        config.validate()?;
        let distribution = config.distribution.resolve()?;
        Ok(Experiment {
            config,
            distribution,
        })
    }

    /// Scaled threshold implied by the config for `(n, k)`.
    pub fn threshold_for(&self, n: u64, k: u64) -> Result<Option<i64>, ExperimentError> {
        let q = self.distribution.denominator();
        Ok(match self.config.threshold {
            ThresholdMode::None => None,
            ThresholdMode::Explicit(t) => Some(scaled_threshold(t, q)),
            ThresholdMode::Solved => {
                Some(thresholds(n, k, self.config.delta, &self.distribution)?.t_scaled)
            }
        })
    }

    fn estimate(&self, n: u64, k: u64, t: Option<i64>) -> Result<EstimateResult, ExperimentError> {
        let cfg = &self.config;
        let start = Instant::now();
        let tally = run_replications(
            &self.distribution,
            n as usize,
            k as usize,
            t,
            cfg.replications,
            cfg.seed,
            cfg.workers,
        )?;
        let elapsed_ms = start.elapsed().as_millis();
        let reps = tally.replications;
        let (ci_low, ci_high) = wilson_interval(tally.top_distinct, reps, 0.95)?;
        let frac = |c: u64| t.map(|_| c as f64 / reps as f64);
        let z = tally.z_moments();
        let w = tally.w_moments();
        Ok(EstimateResult {
            n,
            k,
            delta: cfg.delta,
            t_scaled: t,
            replications: reps,
            successes: tally.top_distinct,
            phat: tally.top_distinct as f64 / reps as f64,
            ci_low,
            ci_high,
            z_mean: z.map(|m| m.0),
            z_var: z.map(|m| m.1),
            w_mean: w.map(|m| m.0),
            w_var: w.map(|m| m.1),
            p_z_lt_k: frac(tally.z_below_k),
            p_w_gt_0: frac(tally.w_positive),
            p_containment: frac(tally.containment),
            bottom_successes: tally.bottom_distinct,
            seed: cfg.seed,
            elapsed_ms,
        })
    }

    /// Estimates `P(U_{n,k})`, with threshold moments as configured.
    pub fn estimate_top_k_distinct(
        &self,
        n: u64,
        k: u64,
    ) -> Result<EstimateResult, ExperimentError> {
        let t = self.threshold_for(n, k)?;
        self.estimate(n, k, t)
    }

    /// Estimates the moments of `Z_t` and `W_n(t)` at the scaled threshold `t`.
    pub fn estimate_moments(
        &self,
        n: u64,
        k: u64,
        t: i64,
    ) -> Result<EstimateResult, ExperimentError> {
        self.estimate(n, k, Some(t))
    }

    /// One row per grid point, in grid order.
    pub fn convergence_sweep(&self) -> Result<Vec<EstimateResult>, ExperimentError> {
        self.config
            .n_grid
            .iter()
            .map(|&n| {
                let k = self.config.k_rule.k_for(n)?;
                self.estimate_top_k_distinct(n, k)
            })
            .collect()
    }
}

/// Grid indices `i` where `phat(i+1) < phat(i) - (width_i + width_{i+1})`.
pub fn trend_violations(rows: &[EstimateResult]) -> Vec<usize> {
    rows.windows(2)
        .enumerate()
        .filter(|(_, w)| w[1].phat < w[0].phat - (w[0].ci_width() + w[1].ci_width()))
        .map(|(i, _)| i)
        .collect()
}

pub const CSV_COLUMNS: [&str; 16] = [
    "n",
    "k",
    "delta",
    "t_scaled",
    "R",
    "successes",
    "phat",
    "ci_low",
    "ci_high",
    "z_mean",
    "z_var",
    "w_mean",
    "p_z_lt_k",
    "p_w_gt_0",
    "seed",
    "elapsed_ms",
];

/// Writes rows as CSV after a single `#`-prefixed metadata line.
///
/// With `include_timing = false` the elapsed column is left empty so that
/// repeated runs are byte-identical.
pub fn write_csv<W: Write>(
    mut out: W,
    header: &str,
    rows: &[EstimateResult],
    include_timing: bool,
) -> Result<(), ExperimentError> {
    writeln!(out, "# {header}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.n.to_string(),
            r.k.to_string(),
            r.delta.to_string(),
            r.t_scaled.map(|t| t.to_string()).unwrap_or_default(),
            r.replications.to_string(),
            r.successes.to_string(),
            r.phat.to_string(),
            r.ci_low.to_string(),
            r.ci_high.to_string(),
            opt(r.z_mean),
            opt(r.z_var),
            opt(r.w_mean),
            opt(r.p_z_lt_k),
            opt(r.p_w_gt_0),
            r.seed.to_string(),
            if include_timing {
                r.elapsed_ms.to_string()
            } else {
                String::new()
            },
        ])?;
    }
    w.flush()?;
    Ok(())
}

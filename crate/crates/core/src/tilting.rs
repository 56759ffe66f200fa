//! Exact distribution of the iid sum `S_m` of `m` match scores, exponential
//! tilting, Chernoff point bounds and the pairing bound on `E W_n(t)`.
//!
//! Point masses are indexed by the scaled support `0..=m q`. Convolution is
//! done in double precision; all terms are non-negative, so the relative error
//! of each entry stays at the level of `m` ulps.

use num_rational::BigRational;
use num_traits::Zero;
use serde::Serialize;
use thiserror::Error;

use crate::asymptotics::{thresholds, AsymptoticsError};
use crate::distributions::ScoreDistribution;

/// Largest `m q` accepted by [`exact_pmf`].
pub const MAX_SUPPORT: u64 = 10_000_000;
/// Largest `m q` accepted by [`exact_pmf_rational`].
pub const MAX_RATIONAL_SUPPORT: u64 = 2_000;
/// Maximum tolerated drift of the total mass away from 1.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TiltingError {
    #[error("need at least one summand")]
    NoSummands,
    #[error("support m*q = {size} exceeds the limit {limit}")]
    SupportTooLarge { size: u64, limit: u64 },
    #[error("total mass drifted to {0}")]
    NormalizationDrift(f64),
    #[error("theta must be finite and positive, got {0}")]
    InvalidTheta(f64),
    #[error("moment generating function overflows (log value {0})")]
    Overflow(f64),
    #[error("exact convolution requires rational probabilities")]
    InexactProbabilities,
    #[error("pmfs live on different lattices (q = {0} and q = {1})")]
    LatticeMismatch(u32, u32),
    #[error(transparent)]
    Thresholds(#[from] AsymptoticsError),
}

/// Distribution of `S_m` on the scaled lattice `0..=m q`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactPmf {
    pub m: u64,
    pub q: u32,
    pub mass: Vec<f64>,
}

/// `S_m` under the tilted measure `P_theta(S = x) ∝ e^{theta x} P(S = x)`.
#[derive(Debug, Clone)]
pub struct TiltedPmf<'a> {
    pub theta: f64,
    pub base: &'a ExactPmf,
    pub mass: Vec<f64>,
}

fn check_size(m: u64, q: u32, limit: u64) -> Result<(), TiltingError> {
    if m == 0 {
        return Err(TiltingError::NoSummands);
    }
    let size = m.saturating_mul(u64::from(q));
    if size > limit {
        return Err(TiltingError::SupportTooLarge { size, limit });
    }
    Ok(())
}

/// The `m`-fold convolution of the match-score pmf.
pub fn exact_pmf(d: &ScoreDistribution, m: u64) -> Result<ExactPmf, TiltingError> {
    let q = d.denominator();
    check_size(m, q, MAX_SUPPORT)?;
    let terms: Vec<(usize, f64)> = d.iter().map(|(v, p)| (v as usize, p)).collect();
    let full = m as usize * q as usize;
    let mut mass = vec![0.0; full + 1];
    let mut next = vec![0.0; full + 1];
    for &(v, p) in &terms {
        mass[v] = p;
    }
    let mut len = q as usize + 1;
    for _ in 1..m {
        next[..len + q as usize].iter_mut().for_each(|x| *x = 0.0);
        for (s, &w) in mass[..len].iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for &(v, p) in &terms {
                next[s + v] += w * p;
            }
        }
        len += q as usize;
        std::mem::swap(&mut mass, &mut next);
    }
    let pmf = ExactPmf { m, q, mass };
    let total = pmf.total();
    if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(TiltingError::NormalizationDrift(total));
    }
    Ok(pmf)
}

/// Exact rational pmf of `S_m`; only for small lattices.
pub fn exact_pmf_rational(d: &ScoreDistribution, m: u64) -> Result<Vec<BigRational>, TiltingError> {
    let q = d.denominator();
    check_size(m, q, MAX_RATIONAL_SUPPORT)?;
    let probs = d.exact_probs().ok_or(TiltingError::InexactProbabilities)?;
    let terms: Vec<(usize, &BigRational)> =
        d.support().iter().map(|&v| v as usize).zip(probs).collect();
    let mut mass = vec![BigRational::zero(); q as usize + 1];
    for &(v, p) in &terms {
        mass[v] = p.clone();
    }
    for _ in 1..m {
        let mut next = vec![BigRational::zero(); mass.len() + q as usize];
        for (s, w) in mass.iter().enumerate() {
            if w.is_zero() {
                continue;
            }
            for &(v, p) in &terms {
                next[s + v] += w * p;
            }
        }
        mass = next;
    }
    Ok(mass)
}

impl ExactPmf {
    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// Largest scaled support point, `m q`.
    pub fn max_support(&self) -> usize {
        self.mass.len() - 1
    }

    /// Convolution of two pmfs on the same lattice.
    pub fn convolve(&self, other: &ExactPmf) -> Result<ExactPmf, TiltingError> {
        if self.q != other.q {
            return Err(TiltingError::LatticeMismatch(self.q, other.q));
        }
        let mut mass = vec![0.0; self.mass.len() + other.mass.len() - 1];
        for (i, &a) in self.mass.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (j, &b) in other.mass.iter().enumerate() {
                mass[i + j] += a * b;
            }
        }
        Ok(ExactPmf {
            m: self.m + other.m,
            q: self.q,
            mass,
        })
    }

    pub fn mean(&self) -> f64 {
        mean_of(&self.mass, self.q)
    }
}

impl TiltedPmf<'_> {
    pub fn mean(&self) -> f64 {
        mean_of(&self.mass, self.base.q)
    }
}

fn mean_of(mass: &[f64], q: u32) -> f64 {
    mass.iter()
        .enumerate()
        .map(|(s, p)| s as f64 * p)
        .sum::<f64>()
        / f64::from(q)
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// `ln E e^{theta S_m} = m ln sum_i p_i e^{theta v_i / q}`.
pub fn log_mgf(d: &ScoreDistribution, m: u64, theta: f64) -> f64 {
    let q = f64::from(d.denominator());
    let terms: Vec<f64> = d
        .iter()
        .map(|(v, p)| p.ln() + theta * f64::from(v) / q)
        .collect();
    m as f64 * log_sum_exp(&terms)
}

/// `E e^{theta S_m}`; fails with [`TiltingError::Overflow`] when not representable.
pub fn mgf(d: &ScoreDistribution, m: u64, theta: f64) -> Result<f64, TiltingError> {
    let lm = log_mgf(d, m, theta);
    let value = lm.exp();
    if !value.is_finite() {
        return Err(TiltingError::Overflow(lm));
    }
    Ok(value)
}

/// Exponentially tilted pmf, normalized in log space.
pub fn tilt(pmf: &ExactPmf, theta: f64) -> TiltedPmf<'_> {
    let q = f64::from(pmf.q);
    let logw: Vec<f64> = pmf
        .mass
        .iter()
        .enumerate()
        .map(|(s, &p)| {
            if p > 0.0 {
                p.ln() + theta * s as f64 / q
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut mass: Vec<f64> = logw.iter().map(|&lw| (lw - max).exp()).collect();
    let total: f64 = mass.iter().sum();
    mass.iter_mut().for_each(|p| *p /= total);
    TiltedPmf {
        theta,
        base: pmf,
        mass,
    }
}

/// Mode of a pmf: `(s*, p*)` with the smallest maximizing support point.
pub fn sup_pmf(mass: &[f64]) -> (usize, f64) {
    mass.iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (s, p)| {
            if p > best.1 {
                (s, p)
            } else {
                best
            }
        })
}

/// Largest point mass over scaled support points with `s / q > l`;
/// `None` when no support point lies above `l`.
pub fn sup_pmf_above(mass: &[f64], q: u32, l: f64) -> Option<(usize, f64)> {
    let cut = l * f64::from(q);
    mass.iter()
        .copied()
        .enumerate()
        .filter(|&(s, _)| s as f64 > cut)
        .fold(None, |best: Option<(usize, f64)>, (s, p)| match best {
            Some((_, bp)) if bp >= p => best,
            _ => Some((s, p)),
        })
}

/// `P(S_m > t)` for `t` in points, summed from the far tail inward.
pub fn exact_tail(pmf: &ExactPmf, t: f64) -> f64 {
    let cut = t * f64::from(pmf.q);
    (0..=pmf.max_support())
        .rev()
        .take_while(|&s| s as f64 > cut)
        .map(|s| pmf.mass[s])
        .sum()
}

/// `P(S_m <= t)`, summed from the lower end.
pub fn exact_cdf(pmf: &ExactPmf, t: f64) -> f64 {
    let cut = t * f64::from(pmf.q);
    pmf.mass
        .iter()
        .enumerate()
        .filter(|&(s, _)| s as f64 <= cut)
        .map(|(_, &p)| p)
        .sum()
}

/// `e^{-theta l} E e^{theta S_m} sup_{x > l} P_theta(S_m = x)`, an upper bound
/// on `sup_{x > l} P(S_m = x)` for every `theta > 0`.
pub fn chernoff_point_bound(
    d: &ScoreDistribution,
    m: u64,
    theta: f64,
    l: f64,
) -> Result<f64, TiltingError> {
    let pmf = exact_pmf(d, m)?;
    chernoff_point_bound_with(&pmf, d, theta, l)
}

/// [`chernoff_point_bound`] reusing an already computed pmf of `S_m`.
pub fn chernoff_point_bound_with(
    pmf: &ExactPmf,
    d: &ScoreDistribution,
    theta: f64,
    l: f64,
) -> Result<f64, TiltingError> {
    if !theta.is_finite() || theta <= 0.0 {
        return Err(TiltingError::InvalidTheta(theta));
    }
    let tilted = tilt(pmf, theta);
    let Some((_, sup)) = sup_pmf_above(&tilted.mass, pmf.q, l) else {
        return Ok(0.0);
    };
    Ok((log_mgf(d, pmf.m, theta) - theta * l).exp() * sup)
}

/// One row of the pairing-bound table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollisionBound {
    pub n: u64,
    pub k: u64,
    /// Threshold in points.
    pub t: f64,
    pub bound: f64,
    /// `bound / (k^2 ln(n/k) / sqrt(n))`.
    pub bound_normalized: f64,
}

/// `C(n,2) sup_{x in A_n} P(S_{n-2} = x) P(S_{n-2} > t - 1)`, where `A_n` is
/// the set of attainable values of `S_{n-2}` in `(t - 1, n - 2]`.
///
/// Bounds `E W_n(t)` from above.
pub fn collision_bound_at(pmf: &ExactPmf, n: u64, t: f64) -> f64 {
    debug_assert_eq!(pmf.m + 2, n);
    let sup = sup_pmf_above(&pmf.mass, pmf.q, t - 1.0)
        .map(|(_, p)| p)
        .filter(|&p| p > 0.0)
        .unwrap_or(0.0);
    let pairs = (n * (n - 1) / 2) as f64;
    pairs * sup * exact_tail(pmf, t - 1.0)
}

/// The pairing bound at the solved threshold `t_{n,k}`.
pub fn collision_expectation_bound(
    n: u64,
    k: u64,
    delta: f64,
    d: &ScoreDistribution,
) -> Result<CollisionBound, TiltingError> {
    let th = thresholds(n, k, delta, d)?;
    if n < 3 {
        return Err(TiltingError::NoSummands);
    }
    let pmf = exact_pmf(d, n - 2)?;
    let bound = collision_bound_at(&pmf, n, th.t);
    let nf = n as f64;
    let kf = k as f64;
    let scale = kf * kf * (nf / kf).ln() / nf.sqrt();
    Ok(CollisionBound {
        n,
        k,
        t: th.t,
        bound,
        bound_normalized: bound / scale,
    })
}

//! Normal-tail utilities and the threshold solver.
//!
//! The threshold for `n` players and target count `k` is
//! `t = (n-1)/2 + x sqrt(n-1) sigma`, where `x > 0` solves
//! `n phi(x) / x = (1 + delta) k`, so that roughly `(1 + delta) k` scores are
//! expected above `t`.

use std::f64::consts::PI;

use serde::Serialize;
use thiserror::Error;

use crate::distributions::ScoreDistribution;
use crate::statistics::scaled_threshold;

/// Lower end of the bisection bracket for `x`.
pub const X_MIN: f64 = 1e-6;
/// Relative residual accepted by [`solve_x`].
pub const SOLVER_TOLERANCE: f64 = 1e-10;
/// Default slack `delta` in the target count `(1 + delta) k`.
pub const DEFAULT_DELTA: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AsymptoticsError {
    #[error("x must be positive, got {0}")]
    NonPositiveX(f64),
    #[error("need n >= 2 and 1 <= k < n, got n = {n}, k = {k}")]
    InvalidCounts { n: u64, k: u64 },
    #[error("delta must lie in (0, 1), got {0}")]
    InvalidDelta(f64),
    #[error("no root in [{lo}, {hi}] for n = {n}, k = {k}, delta = {delta}")]
    NoRootInBracket {
        n: u64,
        k: u64,
        delta: f64,
        lo: f64,
        hi: f64,
    },
    #[error("damping must be at least 1, got {0}")]
    InvalidDamping(f64),
    #[error("k schedule needs n > 1, got {0}")]
    ScheduleDomain(f64),
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Upper tail `1 - Phi(x)` through the complementary error function.
pub fn normal_tail(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// `phi(x) / x`, the leading-order approximation to `1 - Phi(x)`.
pub fn mills_ratio_approx(x: f64) -> Result<f64, AsymptoticsError> {
    if x <= 0.0 || x.is_nan() {
        return Err(AsymptoticsError::NonPositiveX(x));
    }
    Ok(normal_pdf(x) / x)
}

/// Upper quantile: the `z` with `1 - Phi(z) = p`, by bisection.
pub fn normal_upper_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "tail probability must lie in (0, 1)");
    let (mut lo, mut hi) = (-40.0f64, 40.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if normal_tail(mid) > p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `log(n phi(x)/x) - log((1+delta) k)`; strictly decreasing in `x > 0`.
fn log_saddle_gap(n: f64, target: f64, x: f64) -> f64 {
    n.ln() - 0.5 * (2.0 * PI).ln() - x.ln() - 0.5 * x * x - target.ln()
}

fn validate(n: u64, k: u64, delta: f64) -> Result<(), AsymptoticsError> {
    if n < 2 || k == 0 || k >= n {
        return Err(AsymptoticsError::InvalidCounts { n, k });
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(AsymptoticsError::InvalidDelta(delta));
    }
    Ok(())
}

/// Relative residual `|n phi(x)/x - (1+delta)k| / ((1+delta)k)`.
pub fn saddle_residual(n: u64, k: u64, delta: f64, x: f64) -> f64 {
    let target = (1.0 + delta) * k as f64;
    log_saddle_gap(n as f64, target, x).exp_m1().abs()
}

/// Solves `n phi(x) / x = (1 + delta) k` for `x > 0` by bisection.
pub fn solve_x(n: u64, k: u64, delta: f64) -> Result<f64, AsymptoticsError> {
    validate(n, k, delta)?;
    let nf = n as f64;
    let target = (1.0 + delta) * k as f64;
    let lo0 = X_MIN;
    let hi0 = (2.0 * nf.ln()).sqrt() + 10.0;
    let f = |x| log_saddle_gap(nf, target, x);
    if f(lo0) < 0.0 || f(hi0) > 0.0 {
        return Err(AsymptoticsError::NoRootInBracket {
            n,
            k,
            delta,
            lo: lo0,
            hi: hi0,
        });
    }
    let (mut lo, mut hi) = (lo0, hi0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x = if f(lo).abs() <= f(hi).abs() { lo } else { hi };
    let residual = saddle_residual(n, k, delta, x);
    if residual > SOLVER_TOLERANCE {
        return Err(AsymptoticsError::NoRootInBracket {
            n,
            k,
            delta,
            lo: lo0,
            hi: hi0,
        });
    }
    Ok(x)
}

/// Solved thresholds for one `(n, k, delta, D)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdResult {
    pub n: u64,
    pub k: u64,
    pub delta: f64,
    pub sigma: f64,
    pub x: f64,
    /// `t_{n,k}` in points.
    pub t: f64,
    /// `l_{n,k} = (n-2)/2 + x sqrt(n-2) sigma` in points.
    pub l: f64,
    pub residual: f64,
    /// `x^2 - 2 ln(n/k)`.
    pub asymptotic_gap: f64,
    pub q: u32,
    /// `floor(t q)`, the threshold on the integer score lattice.
    pub t_scaled: i64,
}

/// Solves `x` and derives `t`, `l` and the scaled threshold.
pub fn thresholds(
    n: u64,
    k: u64,
    delta: f64,
    d: &ScoreDistribution,
) -> Result<ThresholdResult, AsymptoticsError> {
    let x = solve_x(n, k, delta)?;
    thresholds_at(n, k, delta, x, d)
}

/// Thresholds for a caller-supplied `x`, bypassing the solver.
pub fn thresholds_at(
    n: u64,
    k: u64,
    delta: f64,
    x: f64,
    d: &ScoreDistribution,
) -> Result<ThresholdResult, AsymptoticsError> {
    validate(n, k, delta)?;
    if x <= 0.0 || x.is_nan() {
        return Err(AsymptoticsError::NonPositiveX(x));
    }
    let sigma = d.sigma();
    let nf = n as f64;
    let t = 0.5 * (nf - 1.0) + x * (nf - 1.0).sqrt() * sigma;
    let l = 0.5 * (nf - 2.0) + x * (nf - 2.0).sqrt() * sigma;
    Ok(ThresholdResult {
        n,
        k,
        delta,
        sigma,
        x,
        t,
        l,
        residual: saddle_residual(n, k, delta, x),
        asymptotic_gap: x * x - 2.0 * (nf / k as f64).ln(),
        q: d.denominator(),
        t_scaled: scaled_threshold(t, d.denominator()),
    })
}

/// `k(n) = max(1, floor((n / ln n)^{1/4} / damping))`.
pub fn k_schedule(n: f64, damping: f64) -> Result<u64, AsymptoticsError> {
    if !damping.is_finite() || damping < 1.0 {
        return Err(AsymptoticsError::InvalidDamping(damping));
    }
    if !n.is_finite() || n <= 1.0 {
        return Err(AsymptoticsError::ScheduleDomain(n));
    }
    let k = ((n / n.ln()).powf(0.25) / damping).floor();
    Ok((k as u64).max(1))
}

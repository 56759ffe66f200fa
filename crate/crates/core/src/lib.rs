//! Simulation and exact verification toolkit for the extreme scores of
//! random round-robin tournaments between equally strong players.
//!
//! Every match splits one point between its two players according to a
//! finite, symmetric distribution on `{0, 1/q, ..., 1}`. Scores are kept as
//! exact integers in units of `1/q`, so ties are detected exactly.
//!
//! - [`distributions`]: the per-match score distribution and its sampler.
//! - [`engine`]: streaming tournament simulation.
//! - [`statistics`]: order statistics, `Z_t`, `W_n(t)` and distinctness events.
//! - [`asymptotics`]: normal tails and the threshold solver.
//! - [`tilting`]: exact pmfs of score sums, exponential tilts and point bounds.
//! - [`oracle`]: brute-force enumeration for tiny tournaments.
//! - [`experiments`]: seeded, parallel Monte Carlo estimation and sweeps.

pub mod asymptotics;
pub mod distributions;
pub mod engine;
pub mod experiments;
pub mod oracle;
pub mod statistics;
pub mod tilting;

pub use asymptotics::{k_schedule, normal_tail, solve_x, thresholds, ThresholdResult};
pub use distributions::{MatchOutcome, Prob, ScoreDistribution};
pub use engine::{simulate_scores, RandomStream, ScoreVector};
pub use experiments::{EstimateResult, Experiment, ExperimentConfig};
pub use oracle::{enumerate_exact, ExactReport};
pub use statistics::ScoreSummary;
pub use tilting::{exact_pmf, ExactPmf, TiltedPmf};

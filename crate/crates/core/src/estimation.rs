//! Estimators of quality curves, marginal curves and routing preference
//! probabilities from finite pools of graded outcomes.
//!
//! Best-of-b is evaluated with subset semantics: the `b` responses are a
//! uniformly random size-`b` subset of the pool (no replacement). The closed
//! forms below are exact under that model; the Monte Carlo estimator exists
//! for reward types where a closed form is unavailable and is checked against
//! them in tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{marginal_from_quality, MarginalRewardCurve, OutcomePool, QualityCurve, SuccessProb};
use crate::error::{Error, Result};
use crate::scalar::{logistic, Scalar};

/// Probability that the strong decoder's output is preferred over the weak one's.
pub type PreferenceProb<T = f64> = SuccessProb<T>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurveMethod {
    ExactCombinatorial,
    Bootstrap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig<T = f64> {
    pub method: CurveMethod,
    /// Monte Carlo draws per budget level (bootstrap only).
    pub resamples: usize,
    pub seed: u64,
    /// Two-sided confidence level of the percentile interval.
    pub ci_level: f64,
    /// Pool-level bootstrap replicates used for the interval; 0 disables it.
    pub ci_replicates: usize,
    /// `q(0)`, the reward of answering with no samples at all.
    pub zero_reward: T,
}

impl<T: Scalar> Default for EstimatorConfig<T> {
    fn default() -> Self {
        Self {
            method: CurveMethod::ExactCombinatorial,
            resamples: 10_000,
            seed: 0,
            ci_level: 0.95,
            ci_replicates: 200,
            zero_reward: T::zero(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveEstimate<T = f64> {
    pub curve: QualityCurve<T>,
    pub ci_low: Vec<T>,
    pub ci_high: Vec<T>,
    pub method: CurveMethod,
    pub resamples: usize,
    pub seed: u64,
}

/// Fraction of successes `s / N` in a binary pool.
pub fn empirical_lambda<T: Scalar>(pool: &OutcomePool<T>) -> Result<SuccessProb<T>> {
    let s = pool.successes()?;
    SuccessProb::new(T::of_usize(s) / T::of_usize(pool.len()))
}

fn check_budget(b: usize, n: usize) -> Result<()> {
    if b == 0 || b > n {
        Err(Error::BudgetOutOfRange { b, n })
    } else {
        Ok(())
    }
}

/// `1 - C(N-s, b) / C(N, b)`: the chance that a random size-`b` subset of the
/// pool contains at least one success.
pub fn best_of_b_exact_binary<T: Scalar>(pool: &OutcomePool<T>, b: usize) -> Result<T> {
    let n = pool.len();
    check_budget(b, n)?;
    let s = pool.successes()?;
    Ok(T::one() - all_fail_ratio::<T>(n, s, b))
}

/// `C(N-s, b) / C(N, b)` as a telescoping product, which never overflows.
fn all_fail_ratio<T: Scalar>(n: usize, s: usize, b: usize) -> T {
    if n - s < b {
        return T::zero();
    }
    (0..b).fold(T::one(), |acc, k| {
        acc * T::of_usize(n - s - k) / T::of_usize(n - k)
    })
}

/// Exact expected maximum reward of a uniformly random size-`b` subset.
///
/// With rewards sorted ascending, the `i`-th order statistic (1-based) is the
/// subset maximum with probability `C(i-1, b-1) / C(N, b)`.
pub fn best_of_b_exact_scalar<T: Scalar>(pool: &OutcomePool<T>, b: usize) -> Result<T> {
    let n = pool.len();
    check_budget(b, n)?;
    let sorted = sorted_rewards(pool.rewards());
    Ok(expected_max_sorted(&sorted, b))
}

fn sorted_rewards<T: Scalar>(rewards: &[T]) -> Vec<T> {
    let mut sorted = rewards.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    sorted
}

fn expected_max_sorted<T: Scalar>(sorted: &[T], b: usize) -> T {
    let n = sorted.len();
    // w_N = C(N-1, b-1) / C(N, b) = b / N and w_{i-1} = w_i (i - b) / (i - 1).
    let mut w = T::of_usize(b) / T::of_usize(n);
    let mut total = T::zero();
    let mut i = n;
    loop {
        total = total + sorted[i - 1] * w;
        if i == b {
            break;
        }
        w = w * T::of_usize(i - b) / T::of_usize(i - 1);
        i -= 1;
    }
    total
}

fn check_curve_request(n: usize, b_max: usize) -> Result<()> {
    if b_max == 0 {
        return Err(Error::InvalidArgument("b_max must be positive".into()));
    }
    if b_max > n {
        return Err(Error::BudgetOutOfRange { b: b_max, n });
    }
    Ok(())
}

/// Exact best-of-b quality curve for `b = 0..=b_max`.
///
/// Binary pools use the pass@k form; any other pool uses the order-statistic
/// form. Both agree on binary pools.
pub fn exact_curve<T: Scalar>(
    pool: &OutcomePool<T>,
    b_max: usize,
    zero_reward: T,
) -> Result<QualityCurve<T>> {
    let n = pool.len();
    check_curve_request(n, b_max)?;
    let mut values = Vec::with_capacity(b_max + 1);
    values.push(zero_reward);
    if pool.is_binary() {
        let s = pool.successes()?;
        let mut ratio = T::one();
        for b in 1..=b_max {
            ratio = if n - s < b {
                T::zero()
            } else {
                ratio * T::of_usize(n - s - (b - 1)) / T::of_usize(n - (b - 1))
            };
            values.push(T::one() - ratio);
        }
    } else {
        let sorted = sorted_rewards(pool.rewards());
        for b in 1..=b_max {
            values.push(expected_max_sorted(&sorted, b));
        }
    }
    QualityCurve::new(values)
}

/// Monte Carlo best-of-b curve with a pool-level percentile interval.
///
/// Each of `resamples` draws is a random permutation prefix of length
/// `b_max`; its running maximum is one draw of the best-of-b reward for every
/// `b` at once. The interval comes from `ci_replicates` bootstrap copies of
/// the pool (drawn with replacement), each scored with the exact estimator.
pub fn bootstrap_curve<T: Scalar>(
    pool: &OutcomePool<T>,
    b_max: usize,
    config: &EstimatorConfig<T>,
) -> Result<CurveEstimate<T>> {
    let n = pool.len();
    check_curve_request(n, b_max)?;
    if config.resamples == 0 {
        return Err(Error::InvalidArgument("resamples must be at least 1".into()));
    }
    if !(config.ci_level > 0.0 && config.ci_level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "ci level must lie in (0, 1), got {}",
            config.ci_level
        )));
    }
    let rewards = pool.rewards();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut sums = vec![0.0_f64; b_max];
    let mut idx: Vec<usize> = (0..n).collect();
    for _ in 0..config.resamples {
        let mut best = T::neg_infinity();
        for b in 0..b_max {
            let k = rng.random_range(b..n);
            idx.swap(b, k);
            best = best.max(rewards[idx[b]]);
            sums[b] += best.as_f64();
        }
    }
    let mut values = Vec::with_capacity(b_max + 1);
    values.push(config.zero_reward);
    let r = config.resamples as f64;
    values.extend(sums.iter().map(|&s| T::of(s / r)));

    let (mut ci_low, mut ci_high) = (values.clone(), values.clone());
    if config.ci_replicates > 0 {
        let mut per_b: Vec<Vec<T>> = vec![Vec::with_capacity(config.ci_replicates); b_max];
        let mut replicate = vec![T::zero(); n];
        for _ in 0..config.ci_replicates {
            for slot in replicate.iter_mut() {
                *slot = rewards[rng.random_range(0..n)];
            }
            let sorted = sorted_rewards(&replicate);
            for (b, acc) in per_b.iter_mut().enumerate() {
                acc.push(expected_max_sorted(&sorted, b + 1));
            }
        }
        let tail = (1.0 - config.ci_level) / 2.0;
        for (b, mut draws) in per_b.into_iter().enumerate() {
            draws.sort_by(|a, c| a.partial_cmp(c).unwrap_or(std::cmp::Ordering::Equal));
            let lo = percentile(&draws, tail);
            let hi = percentile(&draws, 1.0 - tail);
            ci_low[b + 1] = lo.min(values[b + 1]);
            ci_high[b + 1] = hi.max(values[b + 1]);
        }
    }

    Ok(CurveEstimate {
        curve: QualityCurve::new(values)?,
        ci_low,
        ci_high,
        method: CurveMethod::Bootstrap,
        resamples: config.resamples,
        seed: config.seed,
    })
}

/// Nearest-rank percentile of an ascending slice.
fn percentile<T: Scalar>(sorted: &[T], q: f64) -> T {
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Curve estimate using the configured method.
pub fn estimate_curve<T: Scalar>(
    pool: &OutcomePool<T>,
    b_max: usize,
    config: &EstimatorConfig<T>,
) -> Result<CurveEstimate<T>> {
    match config.method {
        CurveMethod::ExactCombinatorial => {
            let curve = exact_curve(pool, b_max, config.zero_reward)?;
            Ok(CurveEstimate {
                ci_low: curve.values().to_vec(),
                ci_high: curve.values().to_vec(),
                curve,
                method: CurveMethod::ExactCombinatorial,
                resamples: 0,
                seed: config.seed,
            })
        }
        CurveMethod::Bootstrap => bootstrap_curve(pool, b_max, config),
    }
}

/// Finite differences of the estimated quality curve.
pub fn empirical_marginal<T: Scalar>(
    pool: &OutcomePool<T>,
    b_max: usize,
    config: &EstimatorConfig<T>,
) -> Result<MarginalRewardCurve<T>> {
    let estimate = match config.method {
        CurveMethod::ExactCombinatorial => exact_curve(pool, b_max, config.zero_reward)?,
        CurveMethod::Bootstrap => {
            let cfg = EstimatorConfig {
                ci_replicates: 0,
                ..*config
            };
            bootstrap_curve(pool, b_max, &cfg)?.curve
        }
    };
    marginal_from_quality(&estimate)
}

/// Mean of `σ(r_strong - r_weak)` over every strong/weak pair.
pub fn preference_probability<T: Scalar>(
    strong: &OutcomePool<T>,
    weak: &OutcomePool<T>,
) -> Result<PreferenceProb<T>> {
    if strong.is_empty() || weak.is_empty() {
        return Err(Error::EmptyPool);
    }
    let mut total = T::zero();
    for &rs in strong.rewards() {
        for &rw in weak.rewards() {
            total = total + logistic(rs - rw);
        }
    }
    let pairs = T::of_usize(strong.len() * weak.len());
    Ok(PreferenceProb::saturating(total / pairs))
}

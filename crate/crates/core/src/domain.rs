//! Core value types and the closed-form best-of-k reward mathematics.
//!
//! A [`QualityCurve`] holds the expected reward `q(b)` for every budget
//! `b = 0..=b_max`. Its finite differences form a [`MarginalRewardCurve`]
//! whose `j`-th entry (1-based) is the gain from the `j`-th unit of compute,
//! so that the first `b` deltas sum to `q(b) - q(0)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Probability that a single sample succeeds.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct SuccessProb<T = f64>(T);

impl<T: Scalar> SuccessProb<T> {
    pub fn new(value: T) -> Result<Self> {
        if value >= T::zero() && value <= T::one() {
            Ok(Self(value))
        } else {
            Err(Error::InvalidProbability(value.as_f64()))
        }
    }

    /// Clamps into `[0, 1]`; NaN maps to 0.
    pub fn saturating(value: T) -> Self {
        if value.is_nan() {
            return Self(T::zero());
        }
        Self(value.max(T::zero()).min(T::one()))
    }

    pub fn value(self) -> T {
        self.0
    }
}

impl<T: Scalar> Serialize for SuccessProb<T> {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.0.as_f64())
    }
}

impl<'de, T: Scalar> Deserialize<'de> for SuccessProb<T> {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let v = f64::deserialize(deserializer)?;
        Self::new(T::of(v)).map_err(serde::de::Error::custom)
    }
}

/// Expected reward indexed by budget `0..=b_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityCurve<T = f64> {
    values: Vec<T>,
}

impl<T: Scalar> QualityCurve<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::CurveTooShort(values.len()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn b_max(&self) -> usize {
        self.values.len() - 1
    }

    pub fn at(&self, b: usize) -> T {
        self.values[b]
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }
}

/// Per-unit gains `Δ_1..Δ_{b_max}`; stored 0-based so `deltas()[j - 1] = Δ_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MarginalRewardCurve<T = f64> {
    deltas: Vec<T>,
}

impl<T: Scalar> MarginalRewardCurve<T> {
    pub fn new(deltas: Vec<T>) -> Self {
        Self { deltas }
    }

    pub fn deltas(&self) -> &[T] {
        &self.deltas
    }

    pub fn b_max(&self) -> usize {
        self.deltas.len()
    }

    /// `Δ_j` for 1-based `j`; `Δ_0` is 0 by definition.
    pub fn delta(&self, j: usize) -> T {
        if j == 0 {
            T::zero()
        } else {
            self.deltas[j - 1]
        }
    }

    /// Sum of the first `b` deltas, i.e. `q(b) - q(0)`.
    pub fn prefix_sum(&self, b: usize) -> T {
        self.deltas[..b].iter().copied().sum()
    }

    pub fn is_nonincreasing(&self) -> bool {
        self.deltas.windows(2).all(|w| w[1] <= w[0])
    }

    /// Rebuilds the quality curve with the given zero-budget reward.
    pub fn to_quality(&self, q0: T) -> QualityCurve<T> {
        let mut values = Vec::with_capacity(self.deltas.len() + 1);
        let mut acc = q0;
        values.push(acc);
        for &d in &self.deltas {
            acc = acc + d;
            values.push(acc);
        }
        QualityCurve { values }
    }

    pub fn into_deltas(self) -> Vec<T> {
        self.deltas
    }
}

/// Graded rewards of the `N` sampled responses to one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OutcomePool<T = f64> {
    rewards: Vec<T>,
}

impl<T: Scalar> OutcomePool<T> {
    pub fn new(rewards: Vec<T>) -> Result<Self> {
        if rewards.is_empty() {
            return Err(Error::EmptyPool);
        }
        Ok(Self { rewards })
    }

    pub fn rewards(&self) -> &[T] {
        &self.rewards
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn is_binary(&self) -> bool {
        self.rewards
            .iter()
            .all(|&r| r == T::zero() || r == T::one())
    }

    /// Number of successes; errors on any reward outside `{0, 1}`.
    pub fn successes(&self) -> Result<usize> {
        let mut s = 0;
        for &r in &self.rewards {
            if r == T::one() {
                s += 1;
            } else if r != T::zero() {
                return Err(Error::NonBinaryPool(r.as_f64()));
            }
        }
        Ok(s)
    }

    pub fn max(&self) -> T {
        self.rewards
            .iter()
            .copied()
            .fold(T::neg_infinity(), T::max)
    }

    pub fn mean(&self) -> T {
        self.rewards.iter().copied().sum::<T>() / T::of_usize(self.rewards.len())
    }

    /// Unbiased sample variance; `None` for pools of fewer than two rewards.
    pub fn sample_variance(&self) -> Option<T> {
        let n = self.rewards.len();
        if n < 2 {
            return None;
        }
        let mean = self.mean();
        let ss: T = self.rewards.iter().map(|&r| (r - mean) * (r - mean)).sum();
        Some(ss / T::of_usize(n - 1))
    }
}

/// Average per-query budget with per-query bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetSpec {
    pub average_budget: f64,
    pub per_query_cap: usize,
    pub per_query_min: usize,
}

/// Absorbs representation error in products like `0.29 * 100` before flooring.
pub(crate) const FLOOR_SLACK: f64 = 1e-9;

impl BudgetSpec {
    pub fn new(average_budget: f64, per_query_cap: usize, per_query_min: usize) -> Result<Self> {
        if !(average_budget.is_finite() && average_budget >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "average budget must be finite and nonnegative, got {average_budget}"
            )));
        }
        if per_query_cap == 0 {
            return Err(Error::InvalidArgument("per-query cap must be positive".into()));
        }
        if per_query_min > 1 {
            return Err(Error::InvalidArgument(format!(
                "per-query minimum must be 0 or 1, got {per_query_min}"
            )));
        }
        Ok(Self {
            average_budget,
            per_query_cap,
            per_query_min,
        })
    }

    /// `floor(B * n)` units for a batch of `n` queries.
    pub fn total_units(&self, n: usize) -> usize {
        (self.average_budget * n as f64 + FLOOR_SLACK).floor() as usize
    }

    /// The uniform best-of-k level `floor(B)`, clipped into the per-query bounds.
    pub fn uniform_level(&self) -> usize {
        ((self.average_budget + FLOOR_SLACK).floor() as usize)
            .min(self.per_query_cap)
            .max(self.per_query_min)
    }
}

/// `q(b) = 1 - (1 - λ)^b` for `b = 0..=b_max`.
pub fn success_curve<T: Scalar>(lambda: SuccessProb<T>, b_max: usize) -> QualityCurve<T> {
    let fail = T::one() - lambda.value();
    let mut values = Vec::with_capacity(b_max + 1);
    let mut fail_pow = T::one();
    values.push(T::zero());
    for _ in 0..b_max {
        fail_pow = fail_pow * fail;
        values.push(T::one() - fail_pow);
    }
    QualityCurve { values }
}

/// `Δ_j = λ (1 - λ)^{j-1}` for `j = 1..=b_max`.
pub fn marginal_curve_analytic<T: Scalar>(
    lambda: SuccessProb<T>,
    b_max: usize,
) -> MarginalRewardCurve<T> {
    let lam = lambda.value();
    let fail = T::one() - lam;
    let mut deltas = Vec::with_capacity(b_max);
    let mut fail_pow = T::one();
    for _ in 0..b_max {
        deltas.push(lam * fail_pow);
        fail_pow = fail_pow * fail;
    }
    MarginalRewardCurve { deltas }
}

pub fn marginal_from_quality<T: Scalar>(q: &QualityCurve<T>) -> Result<MarginalRewardCurve<T>> {
    if q.values.len() < 2 {
        return Err(Error::CurveTooShort(q.values.len()));
    }
    Ok(MarginalRewardCurve {
        deltas: q.values.windows(2).map(|w| w[1] - w[0]).collect(),
    })
}

/// Deltas of the least concave majorant of the cumulative curve
/// `(k, Δ_1 + ... + Δ_k)`, `k = 0..=b_max`.
///
/// The result is nonincreasing, its prefix sums dominate the input's, and the
/// totals agree at `b_max`. Nonincreasing inputs are returned unchanged.
pub fn monotone_envelope<T: Scalar>(delta: &MarginalRewardCurve<T>) -> MarginalRewardCurve<T> {
    if delta.is_nonincreasing() {
        return delta.clone();
    }
    let n = delta.deltas.len();
    let mut cum = Vec::with_capacity(n + 1);
    cum.push(T::zero());
    for &d in &delta.deltas {
        let last = *cum.last().unwrap();
        cum.push(last + d);
    }

    // Upper hull over x = 0..=n (monotone chain).
    let mut hull: Vec<usize> = Vec::with_capacity(n + 1);
    for k in 0..=n {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            // Drop b when it lies on or below the chord a -> k.
            let lhs = (cum[b] - cum[a]) * T::of_usize(k - a);
            let rhs = (cum[k] - cum[a]) * T::of_usize(b - a);
            if lhs <= rhs {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(k);
    }

    let mut deltas = Vec::with_capacity(n);
    for seg in hull.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let slope = (cum[b] - cum[a]) / T::of_usize(b - a);
        deltas.extend(std::iter::repeat_n(slope, b - a));
    }
    MarginalRewardCurve { deltas }
}

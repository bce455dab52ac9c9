//! Budget allocation across a batch of queries.
//!
//! The allocation problem picks per-query budgets `b_i` maximizing
//! `Σ_i Σ_{j ≤ b_i} Δ_ij` subject to `Σ_i b_i ≤ floor(B n)` and per-query
//! bounds. With nonincreasing marginal curves, buying units one at a time
//! in order of largest next gain is optimal; [`allocate_bruteforce`] is the
//! exhaustive check of that claim on small instances.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{monotone_envelope, BudgetSpec, MarginalRewardCurve, FLOOR_SLACK};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const POLICY_SCHEMA_VERSION: u32 = 1;

/// How the allocator treats marginal curves that increase somewhere.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MonotoneMode {
    /// Replace each curve by the deltas of its concave majorant.
    #[default]
    Envelope,
    /// Reject any curve that is not nonincreasing.
    Strict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation<T = f64> {
    /// `b_i`, aligned with the input curves.
    pub budgets: Vec<usize>,
    pub total_units: usize,
    /// `Σ_i Σ_{j ≤ b_i} Δ_ij` on the input (un-enveloped) curves.
    pub objective_estimate: T,
}

/// Objective of a fixed budget vector against the given curves.
pub fn allocation_objective<T: Scalar>(deltas: &[MarginalRewardCurve<T>], budgets: &[usize]) -> T {
    deltas
        .iter()
        .zip(budgets)
        .map(|(d, &b)| d.prefix_sum(b))
        .sum()
}

fn validate_curves<T: Scalar>(deltas: &[MarginalRewardCurve<T>], budget: &BudgetSpec) -> Result<()> {
    for (i, d) in deltas.iter().enumerate() {
        if d.b_max() != budget.per_query_cap {
            return Err(Error::LengthMismatch {
                expected: budget.per_query_cap,
                got: d.b_max(),
            });
        }
        if d.deltas().iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!("curve {i} has a non-finite delta")));
        }
    }
    Ok(())
}

fn check_minimums(n: usize, budget: &BudgetSpec) -> Result<usize> {
    let total = budget.total_units(n);
    let mandatory = n * budget.per_query_min;
    if mandatory > total {
        return Err(Error::Infeasible(format!(
            "{n} queries need {mandatory} mandatory units but the budget is {total}"
        )));
    }
    Ok(total)
}

fn prepare<T: Scalar>(
    deltas: &[MarginalRewardCurve<T>],
    mode: MonotoneMode,
) -> Result<Vec<MarginalRewardCurve<T>>> {
    match mode {
        MonotoneMode::Envelope => Ok(deltas.iter().map(monotone_envelope).collect()),
        MonotoneMode::Strict => {
            if let Some(i) = deltas.iter().position(|d| !d.is_nonincreasing()) {
                return Err(Error::NonMonotone(i));
            }
            Ok(deltas.to_vec())
        }
    }
}

/// Heap entry: larger gain first, then lower index.
struct Candidate<T> {
    gain: T,
    index: usize,
}

impl<T: Scalar> PartialEq for Candidate<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<T: Scalar> Eq for Candidate<T> {}
impl<T: Scalar> PartialOrd for Candidate<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T: Scalar> Ord for Candidate<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.gain
            .partial_cmp(&other.gain)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.index.cmp(&self.index))
    }
}

/// Online greedy allocation.
///
/// Mandatory minimum units are charged first; remaining units go one at a
/// time to the query with the largest next gain, lowest index first on ties.
/// Units with nonpositive gain are never bought beyond the minimum.
pub fn allocate_greedy<T: Scalar>(
    deltas: &[MarginalRewardCurve<T>],
    budget: &BudgetSpec,
    mode: MonotoneMode,
) -> Result<Allocation<T>> {
    validate_curves(deltas, budget)?;
    let n = deltas.len();
    let total = check_minimums(n, budget)?;
    let curves = prepare(deltas, mode)?;
    let cap = budget.per_query_cap;

    let mut budgets = vec![budget.per_query_min; n];
    let mut used = n * budget.per_query_min;
    let mut heap: BinaryHeap<Candidate<T>> = budgets
        .iter()
        .enumerate()
        .filter(|&(_, &b)| b < cap)
        .map(|(index, &b)| Candidate {
            gain: curves[index].delta(b + 1),
            index,
        })
        .collect();

    while used < total {
        let Some(top) = heap.pop() else { break };
        if top.gain <= T::zero() {
            break;
        }
        let i = top.index;
        budgets[i] += 1;
        used += 1;
        if budgets[i] < cap {
            heap.push(Candidate {
                gain: curves[i].delta(budgets[i] + 1),
                index: i,
            });
        }
    }

    Ok(Allocation {
        objective_estimate: allocation_objective(deltas, &budgets),
        total_units: used,
        budgets,
    })
}

pub const BRUTEFORCE_MAX_QUERIES: usize = 8;
pub const BRUTEFORCE_MAX_CAP: usize = 6;

/// Exhaustive search over every feasible budget vector.
///
/// Among maximizers (within a relative 1e-12) it prefers the fewest total
/// units, then the lexicographically largest vector, which is the vector the
/// greedy tie-break produces on nonincreasing curves.
pub fn allocate_bruteforce<T: Scalar>(
    deltas: &[MarginalRewardCurve<T>],
    budget: &BudgetSpec,
) -> Result<Allocation<T>> {
    let n = deltas.len();
    let cap = budget.per_query_cap;
    if n > BRUTEFORCE_MAX_QUERIES || cap > BRUTEFORCE_MAX_CAP {
        return Err(Error::InstanceTooLarge(format!(
            "n = {n} (max {BRUTEFORCE_MAX_QUERIES}), cap = {cap} (max {BRUTEFORCE_MAX_CAP})"
        )));
    }
    validate_curves(deltas, budget)?;
    let total = check_minimums(n, budget)?;
    let lo = budget.per_query_min;

    let mut current = vec![lo; n];
    let mut best = current.clone();
    let mut best_obj = allocation_objective(deltas, &current);
    let mut best_units = lo * n;
    let tol = T::of(1e-12);
    loop {
        let units: usize = current.iter().sum();
        if units <= total {
            let obj = allocation_objective(deltas, &current);
            let scale = T::one() + best_obj.abs();
            let better = if obj > best_obj + tol * scale {
                true
            } else if (obj - best_obj).abs() <= tol * scale {
                units < best_units || (units == best_units && current > best)
            } else {
                false
            };
            if better {
                best.clone_from(&current);
                best_obj = obj;
                best_units = units;
            }
        }
        // odometer increment
        let mut k = 0;
        loop {
            if k == n {
                return Ok(Allocation {
                    budgets: best,
                    total_units: best_units,
                    objective_estimate: best_obj,
                });
            }
            if current[k] < cap {
                current[k] += 1;
                break;
            }
            current[k] = lo;
            k += 1;
        }
    }
}

/// Best-of-k baseline: every query gets `floor(B)`, clipped to the bounds.
pub fn allocate_uniform<T: Scalar>(
    deltas: &[MarginalRewardCurve<T>],
    budget: &BudgetSpec,
) -> Result<Allocation<T>> {
    validate_curves(deltas, budget)?;
    check_minimums(deltas.len(), budget)?;
    let budgets = vec![budget.uniform_level(); deltas.len()];
    Ok(Allocation {
        objective_estimate: allocation_objective(deltas, &budgets),
        total_units: budgets.iter().sum(),
        budgets,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreKind {
    /// Predicted single-sample success probability.
    Lambda,
    /// Predicted gain of the first unit, `Δ̂_1`.
    FirstDelta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyMeta {
    pub heldout_size: usize,
    pub requested_bins: usize,
    pub effective_bins: usize,
    pub bin_counts: Vec<usize>,
    pub average_budget: f64,
    pub per_query_cap: usize,
    pub per_query_min: usize,
    /// Units the policy spends on the held-out set.
    pub units_used: usize,
}

/// Fixed score-bin to budget map, fit once on held-out data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflinePolicy {
    pub schema_version: u32,
    pub score_kind: ScoreKind,
    /// Interior bin boundaries, strictly ascending; bin `k` is `[e_{k-1}, e_k)`
    /// with the outer bins unbounded.
    pub bin_edges: Vec<f64>,
    pub bin_budgets: Vec<usize>,
    pub calibration_meta: PolicyMeta,
}

impl OfflinePolicy {
    pub fn bin_of(&self, score: f64) -> usize {
        self.bin_edges.partition_point(|&e| e <= score)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let policy: Self = serde_json::from_str(text)?;
        if policy.schema_version != POLICY_SCHEMA_VERSION {
            return Err(Error::VersionMismatch {
                found: policy.schema_version,
                expected: POLICY_SCHEMA_VERSION,
            });
        }
        if policy.bin_budgets.len() != policy.bin_edges.len() + 1 {
            return Err(Error::InvalidArgument(format!(
                "policy has {} edges but {} budgets",
                policy.bin_edges.len(),
                policy.bin_budgets.len()
            )));
        }
        if !policy.bin_edges.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidArgument("policy edges are not strictly ascending".into()));
        }
        Ok(policy)
    }
}

/// Fits a binned policy: equal-count quantile bins over the held-out
/// scores, then one shared budget per bin chosen by greedy over the
/// bin-mean marginal curves.
///
/// Ties in score never straddle a boundary, so heavily tied scores yield
/// fewer bins than requested; `calibration_meta.effective_bins` records it.
pub fn fit_offline_policy<T: Scalar>(
    heldout_scores: &[T],
    heldout_deltas: &[MarginalRewardCurve<T>],
    n_bins: usize,
    budget: &BudgetSpec,
    score_kind: ScoreKind,
    mode: MonotoneMode,
) -> Result<OfflinePolicy> {
    let n = heldout_scores.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if heldout_deltas.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: heldout_deltas.len(),
        });
    }
    if n_bins == 0 {
        return Err(Error::InvalidArgument("at least one bin is required".into()));
    }
    if heldout_scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument("held-out scores must be finite".into()));
    }
    validate_curves(heldout_deltas, budget)?;
    let total = check_minimums(n, budget)?;

    let scores: Vec<f64> = heldout_scores.iter().map(|s| s.as_f64()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let min_score = scores[order[0]];
    let mut edges: Vec<f64> = Vec::with_capacity(n_bins.saturating_sub(1));
    for m in 1..n_bins {
        let cut = scores[order[m * n / n_bins]];
        let floor = edges.last().copied().unwrap_or(min_score);
        if cut > floor {
            edges.push(cut);
        }
    }
    let n_eff = edges.len() + 1;

    let mut policy = OfflinePolicy {
        schema_version: POLICY_SCHEMA_VERSION,
        score_kind,
        bin_edges: edges,
        bin_budgets: vec![0; n_eff],
        calibration_meta: PolicyMeta {
            heldout_size: n,
            requested_bins: n_bins,
            effective_bins: n_eff,
            bin_counts: vec![0; n_eff],
            average_budget: budget.average_budget,
            per_query_cap: budget.per_query_cap,
            per_query_min: budget.per_query_min,
            units_used: 0,
        },
    };

    let cap = budget.per_query_cap;
    let mut sums = vec![vec![T::zero(); cap]; n_eff];
    let mut counts = vec![0usize; n_eff];
    for (i, d) in heldout_deltas.iter().enumerate() {
        let bin = policy.bin_of(scores[i]);
        counts[bin] += 1;
        for (acc, &x) in sums[bin].iter_mut().zip(d.deltas()) {
            *acc = *acc + x;
        }
    }
    let means: Vec<MarginalRewardCurve<T>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| {
            let c = T::of_usize(c);
            MarginalRewardCurve::new(s.into_iter().map(|x| x / c).collect())
        })
        .collect();
    let curves = prepare(&means, mode)?;

    let mut levels = vec![budget.per_query_min; n_eff];
    let mut used = n * budget.per_query_min;
    let mut heap: BinaryHeap<Candidate<T>> = (0..n_eff)
        .filter(|_| budget.per_query_min < cap)
        .map(|index| Candidate {
            gain: curves[index].delta(budget.per_query_min + 1),
            index,
        })
        .collect();
    while let Some(top) = heap.pop() {
        if top.gain <= T::zero() {
            break;
        }
        let m = top.index;
        // A bin that cannot afford one more level never can again.
        if used + counts[m] > total {
            continue;
        }
        levels[m] += 1;
        used += counts[m];
        if levels[m] < cap {
            heap.push(Candidate {
                gain: curves[m].delta(levels[m] + 1),
                index: m,
            });
        }
    }

    // Uniform levels are always feasible here; keep them if greedy's
    // rounding at the budget boundary left it worse off.
    let aggregate = |lv: &[usize]| -> T {
        means
            .iter()
            .zip(lv)
            .zip(&counts)
            .map(|((d, &b), &c)| d.prefix_sum(b) * T::of_usize(c))
            .sum()
    };
    let uniform = vec![budget.uniform_level(); n_eff];
    if aggregate(&uniform) > aggregate(&levels) {
        used = budget.uniform_level() * n;
        levels = uniform;
    }

    policy.bin_budgets = levels;
    policy.calibration_meta.bin_counts = counts;
    policy.calibration_meta.units_used = used;
    Ok(policy)
}

/// Budget for a single query under a fitted policy.
pub fn apply_offline_policy(policy: &OfflinePolicy, score: f64) -> usize {
    policy.bin_budgets[policy.bin_of(score)]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Route {
    Weak,
    Strong,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoutingCosts {
    pub weak_cost: f64,
    pub strong_cost: f64,
}

impl RoutingCosts {
    pub fn new(weak_cost: f64, strong_cost: f64) -> Result<Self> {
        if !(weak_cost > 0.0 && strong_cost > weak_cost && strong_cost.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "routing costs need 0 < weak < strong, got weak = {weak_cost}, strong = {strong_cost}"
            )));
        }
        Ok(Self {
            weak_cost,
            strong_cost,
        })
    }

    /// `floor(n (B - b_W) / (b_S - b_W))`.
    pub fn strong_count(&self, n: usize, average_budget: f64) -> Result<usize> {
        let tol = FLOOR_SLACK * self.strong_cost;
        if !(average_budget >= self.weak_cost - tol && average_budget <= self.strong_cost + tol) {
            return Err(Error::InvalidArgument(format!(
                "budget {average_budget} outside [{}, {}]",
                self.weak_cost, self.strong_cost
            )));
        }
        let frac = (average_budget - self.weak_cost) / (self.strong_cost - self.weak_cost);
        Ok(((frac * n as f64 + FLOOR_SLACK).floor().max(0.0) as usize).min(n))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    /// Route per query, aligned with the input.
    pub routes: Vec<Route>,
    pub realized_avg_cost: f64,
}

impl RoutingDecision {
    fn from_strong_set(n: usize, strong: impl IntoIterator<Item = usize>, costs: &RoutingCosts) -> Self {
        let mut routes = vec![Route::Weak; n];
        let mut n_strong = 0;
        for i in strong {
            routes[i] = Route::Strong;
            n_strong += 1;
        }
        let realized_avg_cost = if n == 0 {
            0.0
        } else {
            ((n - n_strong) as f64 * costs.weak_cost + n_strong as f64 * costs.strong_cost) / n as f64
        };
        Self {
            routes,
            realized_avg_cost,
        }
    }

    pub fn strong_count(&self) -> usize {
        self.routes.iter().filter(|&&r| r == Route::Strong).count()
    }
}

fn ranked_desc<T: Scalar>(values: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Routes the `n_S` queries with the highest preference probability to the
/// strong decoder.
pub fn route_by_preference<T: Scalar>(
    prefs: &[crate::estimation::PreferenceProb<T>],
    costs: &RoutingCosts,
    average_budget: f64,
) -> Result<RoutingDecision> {
    let n = prefs.len();
    let n_strong = costs.strong_count(n, average_budget)?;
    let values: Vec<T> = prefs.iter().map(|p| p.value()).collect();
    let order = ranked_desc(&values);
    Ok(RoutingDecision::from_strong_set(n, order.into_iter().take(n_strong), costs))
}

/// Routes by known per-query reward gains (strong minus weak), spending at
/// most `n_S` strong calls and only on queries with a positive gain.
pub fn route_by_gain<T: Scalar>(
    gains: &[T],
    costs: &RoutingCosts,
    average_budget: f64,
) -> Result<RoutingDecision> {
    let n = gains.len();
    let n_strong = costs.strong_count(n, average_budget)?;
    let order = ranked_desc(gains);
    let chosen = order
        .into_iter()
        .take(n_strong)
        .take_while(|&i| gains[i] > T::zero());
    Ok(RoutingDecision::from_strong_set(n, chosen, costs))
}

/// Routes a uniformly random set of `n_S` queries to the strong decoder.
pub fn route_random(n: usize, costs: &RoutingCosts, average_budget: f64, seed: u64) -> Result<RoutingDecision> {
    let n_strong = costs.strong_count(n, average_budget)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = rand::seq::index::sample(&mut rng, n, n_strong);
    Ok(RoutingDecision::from_strong_set(n, chosen, costs))
}

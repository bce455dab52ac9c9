//! Scoring allocations and predictors.
//!
//! Allocations are scored with the exact subset estimators over each
//! query's full pool: expected success rate for binary datasets, expected
//! reward otherwise. Confidence intervals come from a percentile bootstrap
//! over queries.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::allocator::{
    allocate_greedy, allocate_uniform, apply_offline_policy, fit_offline_policy, route_by_gain,
    route_by_preference, route_random, MonotoneMode, Route, RoutingCosts, RoutingDecision, ScoreKind,
};
use crate::dataset::{Dataset, MetricKind};
use crate::domain::{marginal_curve_analytic, marginal_from_quality, BudgetSpec, MarginalRewardCurve, QualityCurve, SuccessProb};
use crate::error::{Error, Result};
use crate::estimation::{exact_curve, PreferenceProb};
pub use crate::predictor::LossKind;
use crate::predictor::{noisy_oracle_batch, NoiseSpec, XENT_EPS};
use crate::rng::{derive_seed, rng_for};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CiConfig {
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for CiConfig {
    fn default() -> Self {
        Self {
            resamples: 1000,
            level: 0.95,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Mean of per-query terms with a percentile bootstrap interval over queries.
pub fn mean_with_ci(per_query: &[f64], ci: &CiConfig) -> MetricValue {
    let n = per_query.len();
    let value = per_query.iter().sum::<f64>() / n as f64;
    if ci.resamples == 0 || n < 2 {
        return MetricValue {
            value,
            ci_low: value,
            ci_high: value,
        };
    }
    let mut rng = rng_for(ci.seed, 0);
    let mut means: Vec<f64> = (0..ci.resamples)
        .map(|_| (0..n).map(|_| per_query[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - ci.level) / 2.0;
    let pick = |q: f64| {
        let rank = (q * means.len() as f64).ceil() as usize;
        means[rank.clamp(1, means.len()) - 1]
    };
    MetricValue {
        value,
        ci_low: pick(tail).min(value),
        ci_high: pick(1.0 - tail).max(value),
    }
}

fn check_budgets(budgets: &[usize], dataset: &Dataset) -> Result<()> {
    if budgets.len() != dataset.len() {
        return Err(Error::LengthMismatch {
            expected: dataset.len(),
            got: budgets.len(),
        });
    }
    if let Some((&b, r)) = budgets.iter().zip(&dataset.records).find(|(&b, r)| b > r.outcomes.len()) {
        return Err(Error::BudgetOutOfRange {
            b,
            n: r.outcomes.len(),
        });
    }
    Ok(())
}

/// Mean over queries of the chance that `b_i` pooled samples contain a success.
pub fn expected_success_rate(budgets: &[usize], dataset: &Dataset, ci: &CiConfig) -> Result<MetricValue> {
    check_budgets(budgets, dataset)?;
    let per_query: Vec<f64> = budgets
        .iter()
        .zip(&dataset.records)
        .map(|(&b, r)| {
            if b == 0 {
                Ok(0.0)
            } else {
                crate::estimation::best_of_b_exact_binary(&r.outcomes, b)
            }
        })
        .collect::<Result<_>>()?;
    Ok(mean_with_ci(&per_query, ci))
}

/// Mean over queries of the expected best reward of `b_i` pooled samples.
/// A zero budget scores `default_reward` and is an error without one.
pub fn expected_reward(
    budgets: &[usize],
    dataset: &Dataset,
    default_reward: Option<f64>,
    ci: &CiConfig,
) -> Result<MetricValue> {
    check_budgets(budgets, dataset)?;
    let per_query: Vec<f64> = budgets
        .iter()
        .zip(&dataset.records)
        .map(|(&b, r)| {
            if b == 0 {
                default_reward.ok_or_else(|| {
                    Error::InvalidArgument(format!("query {} has budget 0 and no default reward is set", r.id))
                })
            } else {
                crate::estimation::best_of_b_exact_scalar(&r.outcomes, b)
            }
        })
        .collect::<Result<_>>()?;
    Ok(mean_with_ci(&per_query, ci))
}

/// Expected reward of one response per query from the routed decoder.
pub fn routed_reward(decision: &RoutingDecision, dataset: &Dataset, ci: &CiConfig) -> Result<MetricValue> {
    let per_query = routed_terms(decision, dataset)?;
    Ok(mean_with_ci(&per_query, ci))
}

fn routed_terms(decision: &RoutingDecision, dataset: &Dataset) -> Result<Vec<f64>> {
    if decision.routes.len() != dataset.len() {
        return Err(Error::LengthMismatch {
            expected: dataset.len(),
            got: decision.routes.len(),
        });
    }
    decision
        .routes
        .iter()
        .zip(&dataset.records)
        .map(|(route, r)| match route {
            Route::Strong => Ok(r.outcomes.mean()),
            Route::Weak => r
                .weak_outcomes
                .as_ref()
                .map(|w| w.mean())
                .ok_or_else(|| Error::InvalidArgument(format!("record {} has no weak_rewards", r.id))),
        })
        .collect()
}

/// Per-query strong-minus-weak mean reward gap.
pub fn routing_gains(dataset: &Dataset) -> Result<Vec<f64>> {
    dataset
        .records
        .iter()
        .map(|r| {
            r.weak_outcomes
                .as_ref()
                .map(|w| r.outcomes.mean() - w.mean())
                .ok_or_else(|| Error::InvalidArgument(format!("record {} has no weak_rewards", r.id)))
        })
        .collect()
}

/// Per-query ground-truth preference probabilities of the strong decoder.
pub fn routing_preferences(dataset: &Dataset) -> Result<Vec<PreferenceProb<f64>>> {
    dataset
        .records
        .iter()
        .map(|r| {
            let weak = r
                .weak_outcomes
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument(format!("record {} has no weak_rewards", r.id)))?;
            crate::estimation::preference_probability(&r.outcomes, weak)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Uniform,
    Online,
    Offline,
    Oracle,
    RouteOracle,
    RouteLearned,
    RouteRandom,
    AllWeak,
    AllStrong,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Uniform,
        Method::Online,
        Method::Offline,
        Method::Oracle,
        Method::RouteOracle,
        Method::RouteLearned,
        Method::RouteRandom,
        Method::AllWeak,
        Method::AllStrong,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Uniform => "uniform",
            Method::Online => "online",
            Method::Offline => "offline",
            Method::Oracle => "oracle",
            Method::RouteOracle => "route-oracle",
            Method::RouteLearned => "route-learned",
            Method::RouteRandom => "route-random",
            Method::AllWeak => "all-weak",
            Method::AllStrong => "all-strong",
        }
    }

    pub fn is_routing(self) -> bool {
        matches!(
            self,
            Method::RouteOracle | Method::RouteLearned | Method::RouteRandom | Method::AllWeak | Method::AllStrong
        )
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}")))
    }
}

/// Predicted marginal curves for a set of queries plus the scalar score
/// used to bin them.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub curves: Vec<MarginalRewardCurve<f64>>,
    pub scores: Vec<f64>,
    pub score_kind: ScoreKind,
}

impl Predictions {
    /// Analytic binary curves from predicted λ, scored by λ.
    pub fn from_lambdas(lambdas: &[SuccessProb<f64>], bmax: usize) -> Self {
        Self {
            curves: lambdas.iter().map(|&l| marginal_curve_analytic(l, bmax)).collect(),
            scores: lambdas.iter().map(|l| l.value()).collect(),
            score_kind: ScoreKind::Lambda,
        }
    }

    /// Predicted curves scored by their first delta.
    pub fn from_curves(curves: Vec<MarginalRewardCurve<f64>>) -> Self {
        let scores = curves.iter().map(|c| c.delta(1)).collect();
        Self {
            curves,
            scores,
            score_kind: ScoreKind::FirstDelta,
        }
    }

    pub fn len(&self) -> usize {
        self.curves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curves.is_empty()
    }
}

/// Held-out data for fitting offline policies: predicted scores and the
/// empirical marginal curves measured on the same queries.
#[derive(Debug, Clone, PartialEq)]
pub struct HeldOut {
    pub scores: Vec<f64>,
    pub deltas: Vec<MarginalRewardCurve<f64>>,
    pub score_kind: ScoreKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub per_query_min: usize,
    pub monotone_mode: MonotoneMode,
    /// `q(0)` for scalar-reward datasets; binary datasets always use 0.
    pub zero_reward: f64,
    pub n_bins: usize,
    pub ci: CiConfig,
    pub seed: u64,
    pub predictions: Option<Predictions>,
    pub heldout: Option<HeldOut>,
    pub preferences: Option<Vec<PreferenceProb<f64>>>,
    pub routing_costs: Option<RoutingCosts>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            per_query_min: 0,
            monotone_mode: MonotoneMode::Envelope,
            zero_reward: 0.0,
            n_bins: 10,
            ci: CiConfig::default(),
            seed: 0,
            predictions: None,
            heldout: None,
            preferences: None,
            routing_costs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub budget: f64,
    pub method: Method,
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Average units actually spent per query.
    pub realized_budget: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub n: usize,
    pub bmax: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub metric_kind: MetricKind,
    pub rows: Vec<ReportRow>,
    pub dataset_meta: ReportMeta,
}

impl EvaluationReport {
    pub fn value(&self, method: Method, budget: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.budget == budget)
            .map(|r| r.value)
    }

    /// `(budget, value)` pairs for one method, ascending in budget.
    pub fn series(&self, method: Method) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.method == method)
            .map(|r| (r.budget, r.value))
            .collect()
    }

    /// One row per method and budget:
    /// `budget,method,value,ci_low,ci_high,realized_budget`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["budget", "method", "value", "ci_low", "ci_high", "realized_budget"])?;
        for r in &self.rows {
            w.write_record([
                r.budget.to_string(),
                r.method.name().to_string(),
                r.value.to_string(),
                r.ci_low.to_string(),
                r.ci_high.to_string(),
                r.realized_budget.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Exact quality and marginal curves of every pool, used as ground truth.
pub fn truth_curves(dataset: &Dataset, zero_reward: f64) -> Result<Vec<(QualityCurve<f64>, MarginalRewardCurve<f64>)>> {
    let q0 = match dataset.header.metric_kind {
        MetricKind::SuccessRate => 0.0,
        MetricKind::Reward => zero_reward,
    };
    dataset
        .pools()
        .map(|p| {
            let q = exact_curve(p, dataset.bmax(), q0)?;
            let d = marginal_from_quality(&q)?;
            Ok((q, d))
        })
        .collect()
}

/// Fits an offline policy on `heldout` and applies it to `predictions`.
pub fn offline_budgets(
    heldout: &HeldOut,
    predictions: &Predictions,
    n_bins: usize,
    budget: &BudgetSpec,
    mode: MonotoneMode,
) -> Result<Vec<usize>> {
    let policy = fit_offline_policy(&heldout.scores, &heldout.deltas, n_bins, budget, heldout.score_kind, mode)?;
    Ok(predictions
        .scores
        .iter()
        .map(|&s| apply_offline_policy(&policy, s))
        .collect())
}

struct SweepContext<'a> {
    dataset: &'a Dataset,
    config: &'a SweepConfig,
    truth: Vec<MarginalRewardCurve<f64>>,
}

impl SweepContext<'_> {
    fn budget_spec(&self, b: f64) -> Result<BudgetSpec> {
        BudgetSpec::new(b, self.dataset.bmax(), self.config.per_query_min)
    }

    fn predictions(&self) -> Result<&Predictions> {
        let p = self
            .config
            .predictions
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("online/offline methods need predictions".into()))?;
        if p.len() != self.dataset.len() {
            return Err(Error::LengthMismatch {
                expected: self.dataset.len(),
                got: p.len(),
            });
        }
        Ok(p)
    }

    fn budgets(&self, method: Method, b: f64) -> Result<Vec<usize>> {
        let spec = self.budget_spec(b)?;
        let mode = self.config.monotone_mode;
        Ok(match method {
            Method::Uniform => allocate_uniform(&self.truth, &spec)?.budgets,
            Method::Oracle => allocate_greedy(&self.truth, &spec, mode)?.budgets,
            Method::Online => allocate_greedy(&self.predictions()?.curves, &spec, mode)?.budgets,
            Method::Offline => {
                let heldout = self
                    .config
                    .heldout
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArgument("offline method needs held-out data".into()))?;
                offline_budgets(heldout, self.predictions()?, self.config.n_bins, &spec, mode)?
            }
            _ => unreachable!("routing methods are scored separately"),
        })
    }

    fn routing(&self, method: Method, b: f64, seed: u64) -> Result<RoutingDecision> {
        let costs = self
            .config
            .routing_costs
            .ok_or_else(|| Error::InvalidArgument("routing methods need routing costs".into()))?;
        let n = self.dataset.len();
        match method {
            Method::RouteOracle => route_by_gain(&routing_gains(self.dataset)?, &costs, b),
            Method::RouteLearned => {
                let prefs = self
                    .config
                    .preferences
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArgument("route-learned needs preference predictions".into()))?;
                if prefs.len() != n {
                    return Err(Error::LengthMismatch {
                        expected: n,
                        got: prefs.len(),
                    });
                }
                route_by_preference(prefs, &costs, b)
            }
            Method::RouteRandom => route_random(n, &costs, b, seed),
            Method::AllWeak => route_by_gain(&vec![0.0; n], &costs, costs.weak_cost),
            Method::AllStrong => route_random(n, &costs, costs.strong_cost, seed),
            _ => unreachable!("allocation methods are scored separately"),
        }
    }
}

/// Scores each method at each average budget.
pub fn budget_sweep(
    dataset: &Dataset,
    methods: &[Method],
    budgets: &[f64],
    config: &SweepConfig,
) -> Result<EvaluationReport> {
    if methods.is_empty() || budgets.is_empty() {
        return Err(Error::InvalidArgument("a sweep needs at least one method and one budget".into()));
    }
    let mut sorted_budgets = budgets.to_vec();
    sorted_budgets.sort_by(f64::total_cmp);
    sorted_budgets.dedup();
    let needs_truth = methods.iter().any(|m| !m.is_routing());
    let truth = if needs_truth {
        truth_curves(dataset, config.zero_reward)?
            .into_iter()
            .map(|(_, d)| d)
            .collect()
    } else {
        Vec::new()
    };
    let ctx = SweepContext { dataset, config, truth };
    let metric_kind = if methods.iter().all(|m| m.is_routing()) {
        MetricKind::Reward
    } else {
        dataset.header.metric_kind
    };
    let default_reward = (config.per_query_min == 0).then_some(config.zero_reward);

    let mut rows = Vec::with_capacity(sorted_budgets.len() * methods.len());
    for (bi, &b) in sorted_budgets.iter().enumerate() {
        for (mi, &method) in methods.iter().enumerate() {
            let task_seed = derive_seed(config.seed, (bi * Method::ALL.len() + mi) as u64);
            let ci = CiConfig {
                seed: derive_seed(config.ci.seed, task_seed),
                ..config.ci
            };
            let (metric, realized) = if method.is_routing() {
                let decision = ctx.routing(method, b, task_seed)?;
                (routed_reward(&decision, dataset, &ci)?, decision.realized_avg_cost)
            } else {
                let alloc = ctx.budgets(method, b)?;
                let realized = alloc.iter().sum::<usize>() as f64 / dataset.len() as f64;
                let metric = match dataset.header.metric_kind {
                    MetricKind::SuccessRate => expected_success_rate(&alloc, dataset, &ci)?,
                    MetricKind::Reward => expected_reward(&alloc, dataset, default_reward, &ci)?,
                };
                (metric, realized)
            };
            rows.push(ReportRow {
                budget: b,
                method,
                value: metric.value,
                ci_low: metric.ci_low,
                ci_high: metric.ci_high,
                realized_budget: realized,
            });
        }
    }
    Ok(EvaluationReport {
        metric_kind,
        rows,
        dataset_meta: ReportMeta {
            n: dataset.len(),
            bmax: dataset.bmax(),
            seed: config.seed,
        },
    })
}

/// Budgets a sweep method assigns at one average budget.
pub fn method_budgets(dataset: &Dataset, method: Method, budget: f64, config: &SweepConfig) -> Result<Vec<usize>> {
    if method.is_routing() {
        return Err(Error::InvalidArgument(format!("{method} does not produce per-query budgets")));
    }
    let truth = truth_curves(dataset, config.zero_reward)?
        .into_iter()
        .map(|(_, d)| d)
        .collect();
    SweepContext { dataset, config, truth }.budgets(method, budget)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorMetrics {
    pub model_loss: f64,
    pub avg_baseline_loss: f64,
    pub oracle_loss: f64,
    pub median_threshold_accuracy: f64,
    /// Set when the model beats the perfect predictor, which points at a
    /// loss or labelling mismatch.
    pub model_below_oracle: bool,
}

fn point_loss(pred: f64, truth: f64, kind: LossKind) -> f64 {
    match kind {
        LossKind::Mse => (pred - truth) * (pred - truth),
        LossKind::Xent => {
            let p = pred.clamp(XENT_EPS, 1.0 - XENT_EPS);
            -(truth * p.ln() + (1.0 - truth) * (1.0 - p).ln())
        }
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Model loss against the constant-mean and perfect-prediction baselines,
/// plus agreement of above/below-median labels.
pub fn predictor_metrics(predictions: &[f64], truths: &[f64], loss_kind: LossKind) -> Result<PredictorMetrics> {
    if predictions.len() != truths.len() {
        return Err(Error::LengthMismatch {
            expected: truths.len(),
            got: predictions.len(),
        });
    }
    let n = truths.len();
    if n < 2 {
        return Err(Error::InvalidArgument("predictor metrics need at least 2 queries".into()));
    }
    let nf = n as f64;
    let mean_truth = truths.iter().sum::<f64>() / nf;
    let mean_loss = |preds: &mut dyn Iterator<Item = f64>| -> f64 {
        preds.zip(truths).map(|(p, &t)| point_loss(p, t, loss_kind)).sum::<f64>() / nf
    };
    let model_loss = mean_loss(&mut predictions.iter().copied());
    let avg_baseline_loss = mean_loss(&mut std::iter::repeat_n(mean_truth, n));
    let oracle_loss = mean_loss(&mut truths.iter().copied());
    let m = median(truths);
    let agree = predictions
        .iter()
        .zip(truths)
        .filter(|(&p, &t)| (p > m) == (t > m))
        .count();
    Ok(PredictorMetrics {
        model_loss,
        avg_baseline_loss,
        oracle_loss,
        median_threshold_accuracy: agree as f64 / nf,
        model_below_oracle: model_loss < oracle_loss,
    })
}

/// Squared-norm losses over whole curves; accuracy is judged on `Δ_1`.
pub fn predictor_metrics_curves(
    predictions: &[MarginalRewardCurve<f64>],
    truths: &[MarginalRewardCurve<f64>],
) -> Result<PredictorMetrics> {
    if predictions.len() != truths.len() {
        return Err(Error::LengthMismatch {
            expected: truths.len(),
            got: predictions.len(),
        });
    }
    let n = truths.len();
    if n < 2 {
        return Err(Error::InvalidArgument("predictor metrics need at least 2 queries".into()));
    }
    let dim = truths[0].b_max();
    if let Some(c) = predictions.iter().chain(truths).find(|c| c.b_max() != dim) {
        return Err(Error::LengthMismatch {
            expected: dim,
            got: c.b_max(),
        });
    }
    let nf = n as f64;
    let mut mean = vec![0.0; dim];
    for t in truths {
        for (m, &x) in mean.iter_mut().zip(t.deltas()) {
            *m += x / nf;
        }
    }
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let model_loss = predictions
        .iter()
        .zip(truths)
        .map(|(p, t)| sq(p.deltas(), t.deltas()))
        .sum::<f64>()
        / nf;
    let avg_baseline_loss = truths.iter().map(|t| sq(&mean, t.deltas())).sum::<f64>() / nf;
    let first_pred: Vec<f64> = predictions.iter().map(|c| c.delta(1)).collect();
    let first_truth: Vec<f64> = truths.iter().map(|c| c.delta(1)).collect();
    let acc = predictor_metrics(&first_pred, &first_truth, LossKind::Mse)?.median_threshold_accuracy;
    Ok(PredictorMetrics {
        model_loss,
        avg_baseline_loss,
        oracle_loss: 0.0,
        median_threshold_accuracy: acc,
        model_below_oracle: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub mean_prediction: f64,
    pub mean_truth: f64,
    pub count: usize,
}

/// Equal-width bins over `[0, 1]` on the prediction; empty bins are omitted.
/// Predictions outside the interval fall into the end bins.
pub fn calibration_curve(predictions: &[f64], truths: &[f64], n_bins: usize) -> Result<Vec<CalibrationBin>> {
    if predictions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if predictions.len() != truths.len() {
        return Err(Error::LengthMismatch {
            expected: truths.len(),
            got: predictions.len(),
        });
    }
    if n_bins < 2 {
        return Err(Error::InvalidArgument("calibration needs at least 2 bins".into()));
    }
    let mut sums = vec![(0.0, 0.0, 0usize); n_bins];
    for (&p, &t) in predictions.iter().zip(truths) {
        let k = ((p * n_bins as f64).floor().max(0.0) as usize).min(n_bins - 1);
        sums[k].0 += p;
        sums[k].1 += t;
        sums[k].2 += 1;
    }
    Ok(sums
        .into_iter()
        .filter(|s| s.2 > 0)
        .map(|(p, t, c)| CalibrationBin {
            mean_prediction: p / c as f64,
            mean_truth: t / c as f64,
            count: c,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinShare {
    pub budget: f64,
    pub share_easy: f64,
    pub share_medium: f64,
    pub share_hard: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinBreakdown {
    pub per_budget: Vec<BinShare>,
}

/// Share of allocated units going to the easy, medium and hard tertiles of
/// predicted λ (equal query counts; lowest λ is hardest, ties by index).
///
/// An allocation that spends nothing is reported with shares proportional
/// to tertile sizes so the shares still sum to 1.
pub fn bin_breakdown(allocations: &[(f64, Vec<usize>)], predicted_lambdas: &[f64]) -> Result<BinBreakdown> {
    let n = predicted_lambdas.len();
    if n < 3 {
        return Err(Error::InvalidArgument("bin breakdown needs at least 3 queries".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| predicted_lambdas[a].total_cmp(&predicted_lambdas[b]).then(a.cmp(&b)));
    // 0 = hard, 1 = medium, 2 = easy
    let mut tertile = vec![0usize; n];
    for (rank, &i) in order.iter().enumerate() {
        tertile[i] = rank * 3 / n;
    }
    let mut sizes = [0usize; 3];
    for &t in &tertile {
        sizes[t] += 1;
    }

    let mut per_budget = Vec::with_capacity(allocations.len());
    for (budget, alloc) in allocations {
        if alloc.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: alloc.len(),
            });
        }
        let mut units = [0usize; 3];
        for (&b, &t) in alloc.iter().zip(&tertile) {
            units[t] += b;
        }
        let total: usize = units.iter().sum();
        let shares: [f64; 3] = if total == 0 {
            sizes.map(|s| s as f64 / n as f64)
        } else {
            units.map(|u| u as f64 / total as f64)
        };
        per_budget.push(BinShare {
            budget: *budget,
            share_easy: shares[2],
            share_medium: shares[1],
            share_hard: shares[0],
        });
    }
    Ok(BinBreakdown { per_budget })
}

#[derive(Debug, Clone)]
pub struct PathologyConfig {
    pub noise: NoiseSpec,
    pub budgets: Vec<f64>,
    pub n_bins: usize,
    pub seed: u64,
    pub ci: CiConfig,
}

/// Online and offline allocation driven by a noisy λ oracle, against the
/// uniform baseline. The offline policy is fit on `heldout`, binned by the
/// noisy predictions and budgeted with that set's empirical curves.
pub fn pathology_study(deploy: &Dataset, heldout: &Dataset, config: &PathologyConfig) -> Result<EvaluationReport> {
    let bmax = deploy.bmax();
    if heldout.bmax() != bmax {
        return Err(Error::LengthMismatch {
            expected: bmax,
            got: heldout.bmax(),
        });
    }
    let deploy_pred = noisy_oracle_batch(&deploy.true_lambdas()?, &config.noise, derive_seed(config.seed, 1));
    let heldout_pred = noisy_oracle_batch(&heldout.true_lambdas()?, &config.noise, derive_seed(config.seed, 2));
    let heldout_deltas = truth_curves(heldout, 0.0)?.into_iter().map(|(_, d)| d).collect();
    let sweep = SweepConfig {
        n_bins: config.n_bins,
        ci: config.ci,
        seed: config.seed,
        predictions: Some(Predictions::from_lambdas(&deploy_pred, bmax)),
        heldout: Some(HeldOut {
            scores: heldout_pred.iter().map(|l| l.value()).collect(),
            deltas: heldout_deltas,
            score_kind: ScoreKind::Lambda,
        }),
        ..SweepConfig::default()
    };
    budget_sweep(deploy, &[Method::Online, Method::Offline, Method::Uniform], &config.budgets, &sweep)
}

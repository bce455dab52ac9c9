//! Seeded synthetic workloads and the variance-tranches subset.
//!
//! Every query draws from its own generator, seeded from the run seed and
//! the query index, so a dataset is a pure function of its spec.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DatasetHeader, MetricKind, QueryRecord, DATASET_SCHEMA_VERSION};
use crate::domain::{OutcomePool, SuccessProb};
use crate::error::{Error, Result};
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    CodeLike,
    MathLike,
    ChatLike,
    /// Two decoders per query: `rewards` from the strong one, `weak_rewards`
    /// from the weak one.
    Routing,
    Custom,
}

/// Distribution of λ for queries outside the zero-success mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum LambdaDistribution {
    Beta { alpha: f64, beta: f64 },
    Fixed { value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum RewardModel {
    Binary,
    /// Per-query two-component Gaussian mixture. The first component mean is
    /// N(0, 1); the second sits `separation_max * U(0,1)` above it; each
    /// component has sd `component_sd`; the mixing weight is U(0.1, 0.9).
    GaussianMixture { separation_max: f64, component_sd: f64 },
    /// Independent Gaussian pools for a weak and a strong decoder. The weak
    /// mean is N(0, 1); the strong-minus-weak gap is `+|N(gap_mean, gap_sd)|`,
    /// except with probability `weak_better_frac` where it is negated.
    TwoDecoder {
        weak_better_frac: f64,
        gap_mean: f64,
        gap_sd: f64,
        reward_sd: f64,
    },
}

/// How features expose difficulty: one informative coordinate per
/// difficulty statistic plus Gaussian noise, then `distractors` pure-noise
/// coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub noise: f64,
    pub distractors: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub family: Family,
    pub n_queries: usize,
    pub bmax: usize,
    pub zero_mass: f64,
    pub lambda_distribution: LambdaDistribution,
    pub reward_model: RewardModel,
    pub features: Option<FeatureSpec>,
    pub seed: u64,
}

/// λ is clipped away from 0 and 1 before taking its logit as a feature.
const LOGIT_CLIP: f64 = 0.005;

impl WorkloadSpec {
    /// Family defaults: code-like has half its mass at λ = 0, math-like 5%.
    pub fn preset(family: Family, n_queries: usize, bmax: usize, seed: u64) -> Self {
        let features = Some(FeatureSpec {
            noise: 0.1,
            distractors: 3,
        });
        let (zero_mass, lambda_distribution, reward_model) = match family {
            Family::CodeLike => (
                0.5,
                LambdaDistribution::Beta { alpha: 0.35, beta: 1.5 },
                RewardModel::Binary,
            ),
            Family::MathLike | Family::Custom => (
                0.05,
                LambdaDistribution::Beta { alpha: 0.4, beta: 1.2 },
                RewardModel::Binary,
            ),
            Family::ChatLike => (
                0.0,
                LambdaDistribution::Fixed { value: 0.5 },
                RewardModel::GaussianMixture {
                    separation_max: 3.0,
                    component_sd: 0.3,
                },
            ),
            Family::Routing => (
                0.0,
                LambdaDistribution::Fixed { value: 0.5 },
                RewardModel::TwoDecoder {
                    weak_better_frac: 0.3,
                    gap_mean: 0.5,
                    gap_sd: 0.4,
                    reward_sd: 1.0,
                },
            ),
        };
        Self {
            family,
            n_queries,
            bmax,
            zero_mass,
            lambda_distribution,
            reward_model,
            features,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_queries == 0 || self.bmax == 0 {
            return Err(Error::InvalidArgument("n_queries and bmax must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.zero_mass) {
            return Err(Error::InvalidArgument(format!("zero_mass {} outside [0, 1]", self.zero_mass)));
        }
        match self.lambda_distribution {
            LambdaDistribution::Beta { alpha, beta } => {
                Beta::new(alpha, beta).map_err(|e| Error::InvalidArgument(format!("beta: {e}")))?;
            }
            LambdaDistribution::Fixed { value } => {
                SuccessProb::new(value)?;
            }
        }
        match self.reward_model {
            RewardModel::Binary => {}
            RewardModel::GaussianMixture {
                separation_max,
                component_sd,
            } => {
                if !(separation_max >= 0.0 && component_sd > 0.0) {
                    return Err(Error::InvalidArgument("invalid gaussian mixture parameters".into()));
                }
            }
            RewardModel::TwoDecoder {
                weak_better_frac,
                gap_sd,
                reward_sd,
                ..
            } => {
                if !((0.0..=1.0).contains(&weak_better_frac) && gap_sd >= 0.0 && reward_sd > 0.0) {
                    return Err(Error::InvalidArgument("invalid two-decoder parameters".into()));
                }
            }
        }
        if let Some(f) = self.features {
            if !(f.noise >= 0.0 && f.noise.is_finite()) {
                return Err(Error::InvalidArgument("feature noise must be >= 0".into()));
            }
        }
        Ok(())
    }

    fn metric_kind(&self) -> MetricKind {
        match self.reward_model {
            RewardModel::Binary => MetricKind::SuccessRate,
            _ => MetricKind::Reward,
        }
    }

    fn informative_dims(&self) -> usize {
        match self.reward_model {
            RewardModel::Binary => 1,
            _ => 2,
        }
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn features_from(stats: &[f64], spec: FeatureSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut f = Vec::with_capacity(stats.len() + spec.distractors);
    for &s in stats {
        let eps: f64 = rng.sample(StandardNormal);
        f.push(s + spec.noise * eps);
    }
    for _ in 0..spec.distractors {
        f.push(rng.sample(StandardNormal));
    }
    f
}

/// Draws a dataset from `spec`; byte-identical output for identical specs.
pub fn generate_workload(spec: &WorkloadSpec) -> Result<Dataset> {
    spec.validate()?;
    let beta = match spec.lambda_distribution {
        LambdaDistribution::Beta { alpha, beta } => {
            Some(Beta::new(alpha, beta).map_err(|e| Error::InvalidArgument(format!("beta: {e}")))?)
        }
        LambdaDistribution::Fixed { .. } => None,
    };
    let width = spec.n_queries.saturating_sub(1).to_string().len();
    let mut records = Vec::with_capacity(spec.n_queries);

    for i in 0..spec.n_queries {
        let mut rng = rng_for(spec.seed, i as u64);
        let id = format!("q{i:0width$}");
        let record = match spec.reward_model {
            RewardModel::Binary => {
                let lam = if rng.random::<f64>() < spec.zero_mass {
                    0.0
                } else {
                    match (beta, spec.lambda_distribution) {
                        (Some(b), _) => b.sample(&mut rng),
                        (None, LambdaDistribution::Fixed { value }) => value,
                        (None, LambdaDistribution::Beta { .. }) => unreachable!(),
                    }
                };
                let rewards: Vec<f64> = (0..spec.bmax)
                    .map(|_| if rng.random::<f64>() < lam { 1.0 } else { 0.0 })
                    .collect();
                let features = spec
                    .features
                    .map(|f| features_from(&[logit(lam.clamp(LOGIT_CLIP, 1.0 - LOGIT_CLIP))], f, &mut rng));
                QueryRecord {
                    id,
                    features,
                    outcomes: OutcomePool::new(rewards)?,
                    true_lambda: Some(SuccessProb::new(lam)?),
                    weak_outcomes: None,
                }
            }
            RewardModel::GaussianMixture {
                separation_max,
                component_sd,
            } => {
                let mu_a: f64 = rng.sample(StandardNormal);
                let mu_b = mu_a + separation_max * rng.random::<f64>();
                let weight = rng.random_range(0.1..0.9);
                let noise = Normal::new(0.0, component_sd).expect("validated sd");
                let rewards: Vec<f64> = (0..spec.bmax)
                    .map(|_| {
                        let mu = if rng.random::<f64>() < weight { mu_a } else { mu_b };
                        mu + noise.sample(&mut rng)
                    })
                    .collect();
                let mean = weight * mu_a + (1.0 - weight) * mu_b;
                let var = component_sd * component_sd + weight * (1.0 - weight) * (mu_b - mu_a).powi(2);
                let features = spec
                    .features
                    .map(|f| features_from(&[mean, 0.5 * var.ln()], f, &mut rng));
                QueryRecord {
                    id,
                    features,
                    outcomes: OutcomePool::new(rewards)?,
                    true_lambda: None,
                    weak_outcomes: None,
                }
            }
            RewardModel::TwoDecoder {
                weak_better_frac,
                gap_mean,
                gap_sd,
                reward_sd,
            } => {
                let weak_mean: f64 = rng.sample(StandardNormal);
                let magnitude = (gap_mean + gap_sd * rng.sample::<f64, _>(StandardNormal)).abs();
                let gap = if rng.random::<f64>() < weak_better_frac {
                    -magnitude
                } else {
                    magnitude
                };
                let noise = Normal::new(0.0, reward_sd).expect("validated sd");
                let strong: Vec<f64> = (0..spec.bmax)
                    .map(|_| weak_mean + gap + noise.sample(&mut rng))
                    .collect();
                let weak: Vec<f64> = (0..spec.bmax).map(|_| weak_mean + noise.sample(&mut rng)).collect();
                let features = spec
                    .features
                    .map(|f| features_from(&[gap, weak_mean], f, &mut rng));
                QueryRecord {
                    id,
                    features,
                    outcomes: OutcomePool::new(strong)?,
                    true_lambda: None,
                    weak_outcomes: Some(OutcomePool::new(weak)?),
                }
            }
        };
        records.push(record);
    }

    let header = DatasetHeader {
        schema_version: DATASET_SCHEMA_VERSION,
        bmax: spec.bmax,
        feature_dim: spec
            .features
            .map_or(0, |f| spec.informative_dims() + f.distractors),
        metric_kind: spec.metric_kind(),
    };
    Dataset::new(header, records)
}

/// Union of the `low_frac` lowest- and `high_frac` highest-variance
/// queries, in dataset order. Variance ties break by id.
pub fn select_tranches(dataset: &Dataset, low_frac: f64, high_frac: f64) -> Result<Dataset> {
    if !(low_frac >= 0.0 && high_frac >= 0.0 && low_frac + high_frac <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "tranche fractions must be nonnegative and sum to at most 1, got {low_frac} and {high_frac}"
        )));
    }
    let variances: Vec<f64> = dataset
        .records
        .iter()
        .map(|r| {
            r.outcomes.sample_variance().ok_or_else(|| {
                Error::InvalidArgument(format!("record {} needs at least 2 rewards for a variance", r.id))
            })
        })
        .collect::<Result<_>>()?;
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        variances[a]
            .total_cmp(&variances[b])
            .then_with(|| dataset.records[a].id.cmp(&dataset.records[b].id))
    });
    let n_low = (low_frac * n as f64 + 1e-9).floor() as usize;
    let n_high = (high_frac * n as f64 + 1e-9).floor() as usize;
    let mut keep = vec![false; n];
    for &i in order.iter().take(n_low) {
        keep[i] = true;
    }
    for &i in order.iter().rev().take(n_high) {
        keep[i] = true;
    }
    let chosen: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();
    if chosen.is_empty() {
        return Err(Error::EmptyDataset);
    }
    dataset.subset(&chosen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::empirical_lambda;

    #[test]
    fn full_zero_mass_gives_all_failures() {
        let spec = WorkloadSpec {
            zero_mass: 1.0,
            ..WorkloadSpec::preset(Family::CodeLike, 50, 16, 3)
        };
        let d = generate_workload(&spec).unwrap();
        assert!(d.pools().all(|p| p.rewards().iter().all(|&r| r == 0.0)));
    }

    #[test]
    fn fixed_lambda_concentrates() {
        let spec = WorkloadSpec {
            zero_mass: 0.0,
            lambda_distribution: LambdaDistribution::Fixed { value: 0.5 },
            ..WorkloadSpec::preset(Family::Custom, 400, 64, 8)
        };
        let d = generate_workload(&spec).unwrap();
        let mean: f64 = d.pools().map(|p| empirical_lambda(p).unwrap().value()).sum::<f64>() / 400.0;
        // pooled binomial sd over 400 * 64 trials
        let sd = (0.25 / (400.0 * 64.0_f64)).sqrt();
        assert!((mean - 0.5).abs() < 3.0 * sd, "mean {mean}");
    }

    #[test]
    fn generation_is_deterministic() {
        for family in [Family::CodeLike, Family::ChatLike, Family::Routing] {
            let spec = WorkloadSpec::preset(family, 30, 8, 99);
            let (mut a, mut b) = (Vec::new(), Vec::new());
            generate_workload(&spec).unwrap().write_jsonl(&mut a).unwrap();
            generate_workload(&spec).unwrap().write_jsonl(&mut b).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let base = WorkloadSpec::preset(Family::MathLike, 10, 4, 0);
        assert!(generate_workload(&WorkloadSpec { zero_mass: 1.5, ..base }).is_err());
        assert!(generate_workload(&WorkloadSpec {
            lambda_distribution: LambdaDistribution::Beta { alpha: -1.0, beta: 1.0 },
            ..base
        })
        .is_err());
        assert!(generate_workload(&WorkloadSpec { n_queries: 0, ..base }).is_err());
    }

    fn constant_variance_dataset(n: usize) -> Dataset {
        let spec = WorkloadSpec {
            features: None,
            ..WorkloadSpec::preset(Family::ChatLike, n, 2, 1)
        };
        let mut d = generate_workload(&spec).unwrap();
        for r in &mut d.records {
            r.outcomes = OutcomePool::new(vec![0.0, 1.0]).unwrap();
        }
        d
    }

    #[test]
    fn tranches_with_tied_variances_use_ids() {
        let d = constant_variance_dataset(25);
        let t = select_tranches(&d, 0.1, 0.1).unwrap();
        assert_eq!(t.ids(), vec!["q00", "q01", "q23", "q24"]);
    }

    #[test]
    fn tranches_keep_the_extreme_query() {
        let mut d = constant_variance_dataset(10);
        d.records[6].outcomes = OutcomePool::new(vec![-5.0, 5.0]).unwrap();
        d.records[3].outcomes = OutcomePool::new(vec![0.5, 0.5]).unwrap();
        let t = select_tranches(&d, 0.1, 0.1).unwrap();
        assert_eq!(t.ids(), vec!["q3", "q6"]);
    }

    #[test]
    fn tranche_size_on_distinct_variances() {
        let spec = WorkloadSpec::preset(Family::ChatLike, 97, 16, 5);
        let d = generate_workload(&spec).unwrap();
        let t = select_tranches(&d, 0.1, 0.1).unwrap();
        assert_eq!(t.len(), 18);
        let mut ids = t.ids();
        ids.dedup();
        assert_eq!(ids.len(), 18);
        assert!(select_tranches(&d, 0.7, 0.7).is_err());
    }

    #[test]
    fn tranches_need_two_rewards() {
        let spec = WorkloadSpec::preset(Family::ChatLike, 10, 1, 5);
        let d = generate_workload(&spec).unwrap();
        assert!(select_tranches(&d, 0.1, 0.1).is_err());
    }
}

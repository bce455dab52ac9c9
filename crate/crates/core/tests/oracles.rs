use adacompute::dataset::Dataset;
use adacompute::domain::{OutcomePool, SuccessProb};
use adacompute::estimation::{best_of_b_exact_binary, best_of_b_exact_scalar, empirical_lambda};
use adacompute::evaluation::{budget_sweep, expected_success_rate, CiConfig, Method, Predictions, SweepConfig};
use adacompute::predictor::{
    dataset_loss, loss_and_gradient, predict, predict_probability, train_mse, train_xent, Architecture, Examples,
    Head, LossKind, PredictorParams, TrainConfig,
};
use adacompute::rng::rng_for;
use adacompute::workload::{generate_workload, Family, LambdaDistribution, WorkloadSpec};
use adacompute::MarginalRewardCurve;
use rand::Rng;
use statrs::distribution::{Beta, ContinuousCDF};
use statrs::function::beta::ln_beta;

const NO_CI: CiConfig = CiConfig {
    resamples: 0,
    level: 0.95,
    seed: 0,
};

fn enumerate_subsets(pool: &[f64], b: usize) -> f64 {
    let n = pool.len();
    let mut total = 0.0;
    let mut count = 0usize;
    for mask in 0u32..1 << n {
        if mask.count_ones() as usize != b {
            continue;
        }
        let best = (0..n)
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| pool[i])
            .fold(f64::NEG_INFINITY, f64::max);
        total += best;
        count += 1;
    }
    total / count as f64
}

#[test]
fn binary_estimator_matches_enumeration_for_every_small_pool() {
    for n in 1..=8usize {
        for mask in 0u32..1 << n {
            let pool: Vec<f64> = (0..n).map(|i| f64::from(mask >> i & 1)).collect();
            let p = OutcomePool::new(pool.clone()).unwrap();
            for b in 1..=n {
                let got: f64 = best_of_b_exact_binary(&p, b).unwrap();
                assert!((got - enumerate_subsets(&pool, b)).abs() < 1e-12, "{pool:?} b={b}");
            }
        }
    }
}

#[test]
fn scalar_estimator_matches_enumeration_with_ties() {
    for n in 1..=7usize {
        for code in 0..3usize.pow(n as u32) {
            let pool: Vec<f64> = (0..n).map(|i| (code / 3usize.pow(i as u32) % 3) as f64 - 1.0).collect();
            let p = OutcomePool::new(pool.clone()).unwrap();
            for b in 1..=n {
                let got: f64 = best_of_b_exact_scalar(&p, b).unwrap();
                assert!((got - enumerate_subsets(&pool, b)).abs() < 1e-12, "{pool:?} b={b}");
            }
        }
    }
    let mut rng = rng_for(11, 0);
    for _ in 0..300 {
        let pool: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = OutcomePool::new(pool.clone()).unwrap();
        for b in 1..=8 {
            let got: f64 = best_of_b_exact_scalar(&p, b).unwrap();
            assert!((got - enumerate_subsets(&pool, b)).abs() < 1e-12);
        }
    }
}

/// Probability that a query has `k` successes out of `bmax` under the
/// zero-mass plus beta mixture (beta-binomial for the nonzero part).
fn mixture_pmf(k: usize, bmax: usize, zero_mass: f64, alpha: f64, beta: f64) -> f64 {
    let ln_choose = statrs::function::factorial::ln_binomial(bmax as u64, k as u64);
    let bb = (ln_choose + ln_beta(alpha + k as f64, beta + (bmax - k) as f64) - ln_beta(alpha, beta)).exp();
    (1.0 - zero_mass) * bb + if k == 0 { zero_mass } else { 0.0 }
}

#[test]
fn generated_success_counts_follow_the_workload_distribution() {
    let (n, bmax) = (10_000usize, 128usize);
    for (family, seed) in [(Family::MathLike, 3u64), (Family::CodeLike, 4)] {
        let spec = WorkloadSpec::preset(family, n, bmax, seed);
        let LambdaDistribution::Beta { alpha, beta } = spec.lambda_distribution else {
            panic!("preset should use a beta distribution");
        };
        let d = generate_workload(&spec).unwrap();

        let mut counts = vec![0usize; bmax + 1];
        for p in d.pools() {
            counts[p.successes().unwrap()] += 1;
        }
        let (mut emp, mut model, mut ks) = (0.0, 0.0, 0.0f64);
        for (k, &count) in counts.iter().enumerate() {
            emp += count as f64 / n as f64;
            model += mixture_pmf(k, bmax, spec.zero_mass, alpha, beta);
            ks = ks.max((emp - model).abs());
        }
        // 1% critical value of the one-sample KS statistic
        let critical = 1.63 / (n as f64).sqrt();
        assert!(ks < critical, "{family:?}: KS {ks:.4} >= {critical:.4}");

        let dist = Beta::new(alpha, beta).unwrap();
        let mut nonzero: Vec<f64> = d
            .true_lambdas()
            .unwrap()
            .iter()
            .map(|l| l.value())
            .filter(|&l| l > 0.0)
            .collect();
        nonzero.sort_by(f64::total_cmp);
        let m = nonzero.len() as f64;
        let ks_lambda = nonzero
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = dist.cdf(x);
                (f - i as f64 / m).abs().max((f - (i + 1) as f64 / m).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks_lambda < 1.63 / m.sqrt(), "{family:?}: KS on λ {ks_lambda:.4}");
        let zeros = n as f64 - m;
        let sd = (n as f64 * spec.zero_mass * (1.0 - spec.zero_mass)).sqrt();
        assert!((zeros - n as f64 * spec.zero_mass).abs() < 4.0 * sd);
    }
}

#[test]
fn generator_examples() {
    let mut spec = WorkloadSpec::preset(Family::MathLike, 200, 16, 1);
    spec.zero_mass = 1.0;
    let d = generate_workload(&spec).unwrap();
    assert!(d.pools().all(|p| p.successes().unwrap() == 0));

    spec.zero_mass = 0.0;
    spec.lambda_distribution = LambdaDistribution::Fixed { value: 0.5 };
    let d = generate_workload(&spec).unwrap();
    let mean = d.pools().map(|p| empirical_lambda(p).unwrap().value()).sum::<f64>() / 200.0;
    let sd = (0.25 / (200.0 * 16.0f64)).sqrt();
    assert!((mean - 0.5).abs() < 3.0 * sd, "mean λ̂ {mean}");

    let render = |d: &Dataset| {
        let mut buf = Vec::new();
        d.write_jsonl(&mut buf).unwrap();
        buf
    };
    assert_eq!(render(&d), render(&generate_workload(&spec).unwrap()));
}

fn random_features(rng: &mut impl Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect()).collect()
}

#[test]
fn gradients_match_central_differences() {
    let mut rng = rng_for(12, 0);
    let cases = [
        (Architecture::Linear, Head::Lambda, 1usize, LossKind::Xent),
        (Architecture::Linear, Head::Preference, 1, LossKind::Xent),
        (Architecture::Linear, Head::DeltaVector, 5, LossKind::Mse),
        (Architecture::Mlp { hidden: 6 }, Head::Lambda, 1, LossKind::Xent),
        (Architecture::Mlp { hidden: 4 }, Head::DeltaVector, 3, LossKind::Mse),
    ];
    for (arch, head, out_dim, loss) in cases {
        let features = random_features(&mut rng, 8, 4);
        let targets: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..out_dim).map(|_| rng.random_range(0.02..0.98)).collect())
            .collect();
        let ex = Examples {
            features: &features,
            targets: &targets,
        };
        let idx: Vec<usize> = (0..8).collect();
        for point in 0..10u64 {
            let mut params = PredictorParams::initialized(arch, head, 4, out_dim, point).unwrap();
            let mut flat = params.to_flat();
            for w in &mut flat {
                *w += rng.random_range(-0.5..0.5);
            }
            params.set_flat(&flat).unwrap();
            let l2 = if point % 2 == 0 { 0.0 } else { 0.05 };
            let (_, grad) = loss_and_gradient(&params, ex, &idx, loss, l2);
            for p in 0..flat.len() {
                let h = 1e-5;
                let at = |v: f64| {
                    let mut f = flat.clone();
                    f[p] = v;
                    let mut q = params.clone();
                    q.set_flat(&f).unwrap();
                    loss_and_gradient(&q, ex, &idx, loss, l2).0
                };
                let numeric = (at(flat[p] + h) - at(flat[p] - h)) / (2.0 * h);
                let scale = numeric.abs().max(grad[p].abs());
                if scale > 1e-7 {
                    let rel = (numeric - grad[p]).abs() / scale;
                    assert!(rel < 1e-4, "{arch:?} {head:?} point {point} param {p}: rel err {rel:.2e}");
                }
            }
        }
    }
}

#[test]
fn xent_training_shrinks_error_every_epoch() {
    let n = 20;
    let features: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect())
        .collect();
    let mut rng = rng_for(13, 0);
    let data: Vec<(Vec<f64>, SuccessProb<f64>)> = features
        .iter()
        .map(|f| (f.clone(), SuccessProb::new(rng.random_range(0.05..0.95)).unwrap()))
        .collect();
    let mae = |epochs: usize| {
        let cfg = TrainConfig {
            architecture: Architecture::Linear,
            learning_rate: 2.0,
            epochs,
            batch_size: n,
            seed: 3,
            l2: 0.0,
        };
        let params = train_xent(&data, &cfg).unwrap().params;
        data.iter()
            .map(|(x, t)| (predict_probability(&params, x).unwrap() - t.value()).abs())
            .sum::<f64>()
            / n as f64
    };
    let history: Vec<f64> = (1..=40).map(mae).collect();
    for w in history.windows(2) {
        assert!(w[1] < w[0], "MAE rose: {history:?}");
    }
    assert!(history[39] < 0.5 * history[0]);
}

#[test]
fn trained_models_beat_the_constant_mean() {
    let mut rng = rng_for(14, 0);
    let features = random_features(&mut rng, 200, 3);
    let lambda_data: Vec<(Vec<f64>, SuccessProb<f64>)> = features
        .iter()
        .map(|x| {
            let l = 1.0 / (1.0 + (-(1.5 * x[0] - x[1])).exp());
            (x.clone(), SuccessProb::new(l).unwrap())
        })
        .collect();
    let cfg = TrainConfig::default();
    let params = train_xent(&lambda_data, &cfg).unwrap().params;
    let targets: Vec<Vec<f64>> = lambda_data.iter().map(|(_, l)| vec![l.value()]).collect();
    let mean = targets.iter().map(|t| t[0]).sum::<f64>() / 200.0;
    let ex = Examples {
        features: &features,
        targets: &targets,
    };
    let mut constant = PredictorParams::zeros(Architecture::Linear, Head::Lambda, 3, 1).unwrap();
    let mut flat = constant.to_flat();
    *flat.last_mut().unwrap() = (mean / (1.0 - mean)).ln();
    constant.set_flat(&flat).unwrap();
    assert!(dataset_loss(&params, ex, LossKind::Xent) <= dataset_loss(&constant, ex, LossKind::Xent));

    let curve_data: Vec<(Vec<f64>, MarginalRewardCurve)> = lambda_data
        .iter()
        .map(|(x, l)| (x.clone(), adacompute::domain::marginal_curve_analytic(*l, 4)))
        .collect();
    let params = train_mse(&curve_data, &cfg).unwrap().params;
    let curve_targets: Vec<Vec<f64>> = curve_data.iter().map(|(_, c)| c.deltas().to_vec()).collect();
    let ex = Examples {
        features: &features,
        targets: &curve_targets,
    };
    let mut mean_curve = vec![0.0; 4];
    for t in &curve_targets {
        for (m, v) in mean_curve.iter_mut().zip(t) {
            *m += v / 200.0;
        }
    }
    let baseline = curve_targets
        .iter()
        .map(|t| t.iter().zip(&mean_curve).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum::<f64>()
        / 200.0;
    assert!(dataset_loss(&params, ex, LossKind::Mse) <= baseline);

    let x = &features[0];
    assert_eq!(predict(&params, x).unwrap(), predict(&params, x).unwrap());
}

fn small_math(seed: u64) -> Dataset {
    generate_workload(&WorkloadSpec::preset(Family::MathLike, 300, 32, seed)).unwrap()
}

#[test]
fn uniform_sweep_equals_direct_best_of_floor_b() {
    let d = small_math(21);
    let budgets = [0.5, 1.0, 2.7, 5.0, 13.9, 32.0];
    let report = budget_sweep(
        &d,
        &[Method::Uniform],
        &budgets,
        &SweepConfig {
            ci: NO_CI,
            ..SweepConfig::default()
        },
    )
    .unwrap();
    for b in budgets {
        let k = b.floor() as usize;
        let direct = d
            .pools()
            .map(|p| if k == 0 { 0.0 } else { best_of_b_exact_binary(p, k).unwrap() })
            .sum::<f64>()
            / d.len() as f64;
        assert!((report.value(Method::Uniform, b).unwrap() - direct).abs() < 1e-12);
    }
}

#[test]
fn oracle_dominates_and_everything_saturates_at_bmax() {
    let d = small_math(22);
    let budgets = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0];
    let cfg = SweepConfig {
        ci: NO_CI,
        predictions: Some(Predictions::from_lambdas(&d.true_lambdas().unwrap(), d.bmax())),
        ..SweepConfig::default()
    };
    let report = budget_sweep(&d, &[Method::Uniform, Method::Online, Method::Oracle], &budgets, &cfg).unwrap();
    for b in budgets {
        let oracle = report.value(Method::Oracle, b).unwrap();
        let online = report.value(Method::Online, b).unwrap();
        let uniform = report.value(Method::Uniform, b).unwrap();
        assert!(oracle >= online - 1e-12 && oracle >= uniform - 1e-12, "B={b}");
        assert!(online >= uniform - 1e-12, "B={b}: online {online} < uniform {uniform}");
    }
    let top = [Method::Uniform, Method::Online, Method::Oracle].map(|m| report.value(m, 32.0).unwrap());
    assert!((top[0] - top[1]).abs() < 1e-12 && (top[0] - top[2]).abs() < 1e-12);
    let all_in: Vec<usize> = vec![32; d.len()];
    assert!((expected_success_rate(&all_in, &d, &NO_CI).unwrap().value - top[0]).abs() < 1e-12);
}

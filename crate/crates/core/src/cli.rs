//! Command-line interface.
//!
//! Every command writes its primary output to `-o` (or stdout) and echoes a
//! JSON manifest of its inputs, seed and format versions to stderr. Exit
//! codes: 0 success, 1 usage error, 2 data error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::allocator::{
    allocate_greedy, allocation_objective, apply_offline_policy, fit_offline_policy, route_by_gain,
    route_by_preference, route_random, MonotoneMode, OfflinePolicy, RoutingCosts, RoutingDecision,
    POLICY_SCHEMA_VERSION,
};
use crate::dataset::{Dataset, MetricKind, DATASET_SCHEMA_VERSION};
use crate::domain::{BudgetSpec, MarginalRewardCurve, SuccessProb};
use crate::error::Error;
use crate::estimation::{empirical_lambda, estimate_curve, CurveMethod, EstimatorConfig};
use crate::evaluation::{
    bin_breakdown, budget_sweep, calibration_curve, predictor_metrics, predictor_metrics_curves, routed_reward,
    routing_gains, routing_preferences, truth_curves, CiConfig, HeldOut, LossKind, Method, Predictions,
    SweepConfig,
};
use crate::predictor::{
    noisy_oracle_batch, predict, predict_probability, train_mse, train_preference, train_xent, Architecture, Head,
    NoiseKind, NoiseSpec, Prediction, PredictorParams, TrainConfig, PARAMS_SCHEMA_VERSION,
};
use crate::workload::{generate_workload, select_tranches, Family, FeatureSpec, WorkloadSpec};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] Error),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(Error::Io(e))
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Debug, Parser, Serialize)]
#[command(name = "adacompute", version, about = "Adaptive allocation of decoding compute")]
struct Cli {
    /// Run seed; every random draw derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Generate a synthetic workload.
    Generate(GenerateArgs),
    /// Estimate per-query quality curves from outcome pools.
    Estimate(EstimateArgs),
    /// Train a predictor on a dataset.
    Train(TrainArgs),
    /// Allocate per-query budgets.
    Allocate(AllocateArgs),
    /// Fit offline bin-to-budget policies on held-out data.
    FitPolicy(FitPolicyArgs),
    /// Route queries between a weak and a strong decoder.
    Route(RouteArgs),
    /// Evaluate methods across average budgets.
    Sweep(SweepArgs),
    /// Score a trained predictor.
    Metrics(MetricsArgs),
    /// Keep the lowest- and highest-variance queries.
    Tranches(TranchesArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum FamilyArg {
    CodeLike,
    MathLike,
    ChatLike,
    Routing,
    Custom,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::CodeLike => Family::CodeLike,
            FamilyArg::MathLike => Family::MathLike,
            FamilyArg::ChatLike => Family::ChatLike,
            FamilyArg::Routing => Family::Routing,
            FamilyArg::Custom => Family::Custom,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ModeArg {
    Envelope,
    Strict,
}

impl From<ModeArg> for MonotoneMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Envelope => MonotoneMode::Envelope,
            ModeArg::Strict => MonotoneMode::Strict,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum NoiseKindArg {
    Lambda,
    Logit,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum HeadArg {
    Lambda,
    DeltaVector,
    Preference,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ArchArg {
    Linear,
    Mlp,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum EstimateMethodArg {
    Exact,
    Bootstrap,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum StrategyArg {
    Oracle,
    Preference,
    Random,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum LossArg {
    Mse,
    Xent,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum FormatArg {
    Csv,
    Json,
}

/// Where predicted marginal curves come from. Without either flag, curves
/// are estimated exactly from the outcome pools.
#[derive(Debug, Args, Serialize)]
struct SourceArgs {
    /// Predictor parameters (lambda or delta-vector head).
    #[arg(long, conflicts_with = "oracle_noise")]
    params: Option<PathBuf>,
    /// Use the recorded true λ plus noise of this standard deviation.
    #[arg(long)]
    oracle_noise: Option<f64>,
    /// Scale on which oracle noise is added.
    #[arg(long, value_enum, default_value = "lambda")]
    noise_kind: NoiseKindArg,
}

#[derive(Debug, Args, Serialize)]
struct OutputArg {
    /// Output file; stdout when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    family: FamilyArg,
    /// Number of queries.
    #[arg(long = "n")]
    n: usize,
    /// Pool size per query.
    #[arg(long)]
    bmax: usize,
    /// Overrides the family's fraction of λ = 0 queries.
    #[arg(long)]
    zero_mass: Option<f64>,
    /// Overrides the feature noise standard deviation.
    #[arg(long)]
    feature_noise: Option<f64>,
    /// Overrides the number of pure-noise feature columns.
    #[arg(long)]
    distractors: Option<usize>,
    /// Omit features entirely.
    #[arg(long)]
    no_features: bool,
    #[command(flatten)]
    out: OutputArg,
}

#[derive(Debug, Args, Serialize)]
struct EstimateArgs {
    #[arg(short, long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "exact")]
    method: EstimateMethodArg,
    /// Largest budget to estimate; defaults to the pool size.
    #[arg(long)]
    bmax: Option<usize>,
    #[arg(long, default_value_t = 10_000)]
    resamples: usize,
    #[arg(long, default_value_t = 0.95)]
    ci_level: f64,
    #[arg(long, default_value_t = 200)]
    ci_replicates: usize,
    /// Quality at budget 0 for reward datasets.
    #[arg(long, default_value_t = 0.0)]
    zero_reward: f64,
    #[command(flatten)]
    out: OutputArg,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    #[arg(short, long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "lambda")]
    head: HeadArg,
    #[arg(long, value_enum, default_value = "linear")]
    arch: ArchArg,
    /// Hidden units for the mlp architecture.
    #[arg(long, default_value_t = 16)]
    hidden: usize,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.0)]
    l2: f64,
    #[command(flatten)]
    out: OutputArg,
}

#[derive(Debug, Args, Serialize)]
struct AllocateArgs {
    #[arg(short, long)]
    input: PathBuf,
    /// Average budget per query; a single value or a comma list.
    #[arg(long, alias = "budgets", value_delimiter = ',', required_unless_present = "policy")]
    budget: Vec<f64>,
    /// Apply offline policies from `fit-policy` instead of online greedy.
    #[arg(long, conflicts_with = "budget")]
    policy: Option<PathBuf>,
    /// Minimum budget per query; defaults to 1 for reward datasets, else 0.
    #[arg(long)]
    min: Option<usize>,
    #[arg(long, value_enum, default_value = "envelope")]
    mode: ModeArg,
    #[arg(long, default_value_t = 0.0)]
    zero_reward: f64,
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    out: OutputArg,
}

#[derive(Debug, Args, Serialize)]
struct FitPolicyArgs {
    /// Held-out dataset.
    #[arg(short, long)]
    input: PathBuf,
    #[arg(long, alias = "budgets", value_delimiter = ',', required = true)]
    budget: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    bins: usize,
    #[arg(long)]
    min: Option<usize>,
    #[arg(long, value_enum, default_value = "envelope")]
    mode: ModeArg,
    #[arg(long, default_value_t = 0.0)]
    zero_reward: f64,
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    out: OutputArg,
}

#[derive(Debug, Args, Serialize)]
struct RouteArgs {
    /// Dataset with both strong (`rewards`) and weak (`weak_rewards`) pools.
    #[arg(short, long)]
    input: PathBuf,
    #[arg(long, alias = "budgets", value_delimiter = ',', required = true)]
    budget: Vec<f64>,
    #[arg(long, value_enum, default_value = "preference")]
    strategy: StrategyArg,
    #[arg(long, default_value_t = 1.0)]
    weak_cost: f64,
    #[arg(long, default_value_t = 2.0)]
    strong_cost: f64,
    /// Preference-head parameters; ground-truth preferences when omitted.
    #[arg(long)]
    params: Option<PathBuf>,
    #[command(flatten)]
    out: OutputArg,
}

#[derive(Debug, Args, Serialize)]
struct SweepArgs {
    #[arg(short, long)]
    input: PathBuf,
    /// Comma list of methods.
    #[arg(long, value_delimiter = ',', required = true)]
    methods: Vec<String>,
    #[arg(long, alias = "budgets", value_delimiter = ',', required = true)]
    budget: Vec<f64>,
    /// Held-out dataset for fitting offline policies.
    #[arg(long)]
    heldout: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    bins: usize,
    #[arg(long)]
    min: Option<usize>,
    #[arg(long, value_enum, default_value = "envelope")]
    mode: ModeArg,
    #[arg(long, default_value_t = 0.0)]
    zero_reward: f64,
    #[arg(long, default_value_t = 1000)]
    ci_resamples: usize,
    #[arg(long, default_value_t = 0.95)]
    ci_level: f64,
    #[arg(long, default_value_t = 1.0)]
    weak_cost: f64,
    #[arg(long, default_value_t = 2.0)]
    strong_cost: f64,
    /// Preference-head parameters for route-learned.
    #[arg(long)]
    preference_params: Option<PathBuf>,
    /// Report format; inferred from the output extension when omitted.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    out: OutputArg,
}

#[derive(Debug, Args, Serialize)]
struct MetricsArgs {
    #[arg(short, long)]
    input: PathBuf,
    #[arg(long)]
    params: PathBuf,
    /// Defaults to xent for logistic heads and mse for delta vectors.
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    #[arg(long, default_value_t = 10)]
    calibration_bins: usize,
    /// Budgets at which to report the easy/medium/hard split of online
    /// allocations (lambda head only).
    #[arg(long, alias = "budgets", value_delimiter = ',')]
    budget: Vec<f64>,
    #[command(flatten)]
    out: OutputArg,
}

#[derive(Debug, Args, Serialize)]
struct TranchesArgs {
    #[arg(short, long)]
    input: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    low: f64,
    #[arg(long, default_value_t = 0.1)]
    high: f64,
    #[command(flatten)]
    out: OutputArg,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = stdout.write_all(text.as_bytes());
                    0
                }
                _ => {
                    let _ = stderr.write_all(text.as_bytes());
                    1
                }
            };
        }
    };
    match execute(&cli, stdout) {
        Ok(extra) => {
            let manifest = json!({
                "command": &cli.command,
                "seed": cli.seed,
                "versions": {
                    "adacompute": env!("CARGO_PKG_VERSION"),
                    "dataset_schema": DATASET_SCHEMA_VERSION,
                    "policy_schema": POLICY_SCHEMA_VERSION,
                    "params_schema": PARAMS_SCHEMA_VERSION,
                },
                "summary": extra,
            });
            let _ = writeln!(stderr, "{}", serde_json::to_string(&manifest).unwrap_or_default());
            0
        }
        Err(CliError::Usage(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            1
        }
        Err(CliError::Data(e)) => {
            let _ = writeln!(stderr, "error: {e}");
            2
        }
    }
}

fn emit(out: &OutputArg, bytes: &[u8], stdout: &mut dyn Write) -> CliResult<()> {
    match &out.output {
        Some(path) => fs::write(path, bytes)?,
        None => stdout.write_all(bytes)?,
    }
    Ok(())
}

fn emit_json(out: &OutputArg, value: &impl Serialize, stdout: &mut dyn Write) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    emit(out, text.as_bytes(), stdout)
}

fn load(path: &Path) -> CliResult<Dataset> {
    Ok(Dataset::load(path)?)
}

fn load_params(path: &Path) -> CliResult<PredictorParams> {
    Ok(PredictorParams::from_json(&fs::read_to_string(path)?)?)
}

fn default_min(d: &Dataset, min: Option<usize>) -> usize {
    min.unwrap_or(match d.header.metric_kind {
        MetricKind::SuccessRate => 0,
        MetricKind::Reward => 1,
    })
}

fn check_budgets(budgets: &[f64]) -> CliResult<()> {
    if budgets.iter().any(|b| !b.is_finite() || *b < 0.0) {
        return Err(usage("budgets must be finite and nonnegative"));
    }
    Ok(())
}

fn budget_spec(average_budget: f64, cap: usize, min: usize) -> CliResult<BudgetSpec> {
    if average_budget < min as f64 {
        return Err(usage(format!(
            "budget {average_budget} is below the per-query minimum of {min}"
        )));
    }
    BudgetSpec::new(average_budget, cap, min).map_err(|e| usage(e.to_string()))
}

fn empirical_deltas(d: &Dataset, zero_reward: f64) -> CliResult<Vec<MarginalRewardCurve<f64>>> {
    Ok(truth_curves(d, zero_reward)?.into_iter().map(|(_, m)| m).collect())
}

/// Predicted curves and binning scores for `d` from the selected source.
fn predictions(d: &Dataset, source: &SourceArgs, zero_reward: f64, seed: u64) -> CliResult<Predictions> {
    if let Some(path) = &source.params {
        let params = load_params(path)?;
        let features = d.features()?;
        return match params.head {
            Head::Lambda => {
                let lambdas = features
                    .iter()
                    .map(|x| SuccessProb::new(predict_probability(&params, x)?))
                    .collect::<crate::Result<Vec<_>>>()?;
                Ok(Predictions::from_lambdas(&lambdas, d.bmax()))
            }
            Head::DeltaVector => {
                let curves = features
                    .iter()
                    .map(|x| match predict(&params, x)? {
                        Prediction::Curve(c) => Ok(c),
                        _ => unreachable!("delta-vector head yields curves"),
                    })
                    .collect::<crate::Result<Vec<_>>>()?;
                if curves.first().is_some_and(|c| c.b_max() != d.bmax()) {
                    return Err(usage(format!(
                        "predictor emits {} deltas but the dataset has bmax {}",
                        curves[0].b_max(),
                        d.bmax()
                    )));
                }
                Ok(Predictions::from_curves(curves))
            }
            Head::Preference => Err(usage("a preference predictor cannot drive budget allocation")),
        };
    }
    if let Some(sigma) = source.oracle_noise {
        let kind = match source.noise_kind {
            NoiseKindArg::Lambda => NoiseKind::GaussianOnLambda,
            NoiseKindArg::Logit => NoiseKind::GaussianOnLogit,
        };
        let noise = NoiseSpec::new(kind, sigma).map_err(|e| usage(e.to_string()))?;
        let lambdas = noisy_oracle_batch(&d.true_lambdas()?, &noise, seed);
        return Ok(Predictions::from_lambdas(&lambdas, d.bmax()));
    }
    Ok(Predictions::from_curves(empirical_deltas(d, zero_reward)?))
}

fn execute(cli: &Cli, stdout: &mut dyn Write) -> CliResult<serde_json::Value> {
    let seed = cli.seed;
    match &cli.command {
        Command::Generate(a) => generate(a, seed, stdout),
        Command::Estimate(a) => estimate(a, seed, stdout),
        Command::Train(a) => train(a, seed, stdout),
        Command::Allocate(a) => allocate(a, seed, stdout),
        Command::FitPolicy(a) => fit_policy(a, seed, stdout),
        Command::Route(a) => route(a, seed, stdout),
        Command::Sweep(a) => sweep(a, seed, stdout),
        Command::Metrics(a) => metrics(a, stdout),
        Command::Tranches(a) => tranches(a, stdout),
    }
}

fn generate(a: &GenerateArgs, seed: u64, stdout: &mut dyn Write) -> CliResult<serde_json::Value> {
    let mut spec = WorkloadSpec::preset(a.family.into(), a.n, a.bmax, seed);
    if let Some(z) = a.zero_mass {
        spec.zero_mass = z;
    }
    if a.no_features {
        spec.features = None;
    } else {
        let base = spec.features.unwrap_or(FeatureSpec {
            noise: 0.1,
            distractors: 3,
        });
        spec.features = Some(FeatureSpec {
            noise: a.feature_noise.unwrap_or(base.noise),
            distractors: a.distractors.unwrap_or(base.distractors),
        });
    }
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let d = generate_workload(&spec)?;
    let mut buf = Vec::new();
    d.write_jsonl(&mut buf)?;
    emit(&a.out, &buf, stdout)?;
    Ok(json!({ "records": d.len(), "workload": spec }))
}

fn estimate(a: &EstimateArgs, seed: u64, stdout: &mut dyn Write) -> CliResult<serde_json::Value> {
    let d = load(&a.input)?;
    let bmax = a.bmax.unwrap_or(d.bmax());
    if bmax == 0 || bmax > d.bmax() {
        return Err(usage(format!("--bmax must be in 1..={}", d.bmax())));
    }
    let zero_reward = match d.header.metric_kind {
        MetricKind::SuccessRate => 0.0,
        MetricKind::Reward => a.zero_reward,
    };
    let mut buf = Vec::new();
    for (i, r) in d.records.iter().enumerate() {
        let cfg = EstimatorConfig {
            method: match a.method {
                EstimateMethodArg::Exact => CurveMethod::ExactCombinatorial,
                EstimateMethodArg::Bootstrap => CurveMethod::Bootstrap,
            },
            resamples: a.resamples,
            seed: crate::rng::derive_seed(seed, i as u64),
            ci_level: a.ci_level,
            ci_replicates: a.ci_replicates,
            zero_reward,
        };
        let est = estimate_curve(&r.outcomes, bmax, &cfg)?;
        let deltas = crate::domain::marginal_from_quality(&est.curve)?;
        let line = json!({
            "id": r.id,
            "quality": est.curve.values(),
            "deltas": deltas.deltas(),
            "ci_low": est.ci_low,
            "ci_high": est.ci_high,
        });
        serde_json::to_writer(&mut buf, &line).map_err(Error::from)?;
        buf.push(b'\n');
    }
    emit(&a.out, &buf, stdout)?;
    Ok(json!({ "queries": d.len(), "bmax": bmax }))
}

fn train(a: &TrainArgs, seed: u64, stdout: &mut dyn Write) -> CliResult<serde_json::Value> {
    let d = load(&a.input)?;
    let features = d.features()?;
    let cfg = TrainConfig {
        architecture: match a.arch {
            ArchArg::Linear => Architecture::Linear,
            ArchArg::Mlp => Architecture::Mlp { hidden: a.hidden },
        },
        learning_rate: a.learning_rate,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed,
        l2: a.l2,
    };
    let outcome = match a.head {
        HeadArg::Lambda => {
            let targets = d.pools().map(empirical_lambda).collect::<crate::Result<Vec<_>>>()?;
            train_xent(&features.into_iter().zip(targets).collect::<Vec<_>>(), &cfg)
        }
        HeadArg::DeltaVector => {
            let targets = empirical_deltas(&d, 0.0)?;
            train_mse(&features.into_iter().zip(targets).collect::<Vec<_>>(), &cfg)
        }
        HeadArg::Preference => {
            let targets = routing_preferences(&d)?;
            train_preference(&features.into_iter().zip(targets).collect::<Vec<_>>(), &cfg)
        }
    }
    .map_err(|e| match e {
        Error::InvalidArgument(m) => usage(m),
        other => CliError::Data(other),
    })?;
    let mut text = outcome.params.to_json()?;
    text.push('\n');
    emit(&a.out, text.as_bytes(), stdout)?;
    Ok(json!({
        "examples": d.len(),
        "final_loss": outcome.loss_history.last(),
        "parameters": outcome.params.num_parameters(),
    }))
}

fn read_policies(path: &Path) -> CliResult<Vec<OfflinePolicy>> {
    let value: serde_json::Value = serde_json::from_str(&fs::read_to_string(path)?).map_err(Error::from)?;
    let list = value
        .get("policies")
        .and_then(|p| p.as_array())
        .ok_or_else(|| Error::InvalidArgument("policy file has no \"policies\" array".into()))?;
    list.iter()
        .map(|p| Ok(OfflinePolicy::from_json(&p.to_string())?))
        .collect()
}

fn allocate(a: &AllocateArgs, seed: u64, stdout: &mut dyn Write) -> CliResult<serde_json::Value> {
    let d = load(&a.input)?;
    let n = d.len();
    let preds = predictions(&d, &a.source, a.zero_reward, seed)?;
    let ids = d.ids();
    let mut entries = Vec::new();
    if let Some(path) = &a.policy {
        for policy in read_policies(path)? {
            if policy.score_kind != preds.score_kind {
                return Err(usage("policy score kind does not match the prediction source"));
            }
            let budgets: Vec<usize> = preds.scores.iter().map(|&s| apply_offline_policy(&policy, s)).collect();
            let b = policy.calibration_meta.average_budget;
            entries.push(json!({
                "average_budget": b,
                "method": "offline",
                "unit_limit": BudgetSpec::new(b, policy.calibration_meta.per_query_cap, policy.calibration_meta.per_query_min)?.total_units(n),
                "total_units": budgets.iter().sum::<usize>(),
                "objective_estimate": allocation_objective(&preds.curves, &budgets),
                "ids": ids,
                "budgets": budgets,
            }));
        }
    } else {
        check_budgets(&a.budget)?;
        let min = default_min(&d, a.min);
        for &b in &a.budget {
            let spec = budget_spec(b, d.bmax(), min)?;
            let alloc = allocate_greedy(&preds.curves, &spec, a.mode.into())?;
            entries.push(json!({
                "average_budget": b,
                "method": "online",
                "unit_limit": spec.total_units(n),
                "total_units": alloc.total_units,
                "objective_estimate": alloc.objective_estimate,
                "ids": ids,
                "budgets": alloc.budgets,
            }));
        }
    }
    emit_json(&a.out, &json!({ "allocations": entries }), stdout)?;
    Ok(json!({ "queries": n, "allocations": entries.len() }))
}

fn fit_policy(a: &FitPolicyArgs, seed: u64, stdout: &mut dyn Write) -> CliResult<serde_json::Value> {
    check_budgets(&a.budget)?;
    let d = load(&a.input)?;
    let preds = predictions(&d, &a.source, a.zero_reward, seed)?;
    let deltas = empirical_deltas(&d, a.zero_reward)?;
    let min = default_min(&d, a.min);
    let policies = a
        .budget
        .iter()
        .map(|&b| {
            let spec = budget_spec(b, d.bmax(), min)?;
            Ok(fit_offline_policy(&preds.scores, &deltas, a.bins, &spec, preds.score_kind, a.mode.into())?)
        })
        .collect::<CliResult<Vec<_>>>()?;
    emit_json(&a.out, &json!({ "policies": policies }), stdout)?;
    Ok(json!({ "heldout_size": d.len(), "policies": policies.len() }))
}

fn preference_predictions(d: &Dataset, path: &Path) -> CliResult<Vec<SuccessProb<f64>>> {
    let params = load_params(path)?;
    if params.head != Head::Preference {
        return Err(usage("routing needs a preference-head predictor"));
    }
    d.features()?
        .iter()
        .map(|x| Ok(SuccessProb::new(predict_probability(&params, x)?)?))
        .collect()
}

fn route(a: &RouteArgs, seed: u64, stdout: &mut dyn Write) -> CliResult<serde_json::Value> {
    check_budgets(&a.budget)?;
    let d = load(&a.input)?;
    let costs = RoutingCosts::new(a.weak_cost, a.strong_cost).map_err(|e| usage(e.to_string()))?;
    let prefs = match (a.strategy, &a.params) {
        (StrategyArg::Preference, Some(p)) => Some(preference_predictions(&d, p)?),
        (StrategyArg::Preference, None) => Some(routing_preferences(&d)?),
        _ => None,
    };
    let gains = match a.strategy {
        StrategyArg::Oracle => Some(routing_gains(&d)?),
        _ => None,
    };
    let ci = CiConfig {
        resamples: 0,
        ..CiConfig::default()
    };
    let ids = d.ids();
    let mut entries = Vec::new();
    for (k, &b) in a.budget.iter().enumerate() {
        let decision: RoutingDecision = match a.strategy {
            StrategyArg::Oracle => route_by_gain(gains.as_deref().unwrap_or_default(), &costs, b),
            StrategyArg::Preference => route_by_preference(prefs.as_deref().unwrap_or_default(), &costs, b),
            StrategyArg::Random => route_random(d.len(), &costs, b, crate::rng::derive_seed(seed, k as u64)),
        }
        .map_err(|e| usage(e.to_string()))?;
        let value = routed_reward(&decision, &d, &ci)?.value;
        entries.push(json!({
            "average_budget": b,
            "strong_count": decision.strong_count(),
            "realized_avg_cost": decision.realized_avg_cost,
            "expected_reward": value,
            "ids": ids,
            "routes": decision.routes,
        }));
    }
    emit_json(&a.out, &json!({ "decisions": entries }), stdout)?;
    Ok(json!({ "queries": d.len(), "decisions": entries.len() }))
}

fn sweep(a: &SweepArgs, seed: u64, stdout: &mut dyn Write) -> CliResult<serde_json::Value> {
    check_budgets(&a.budget)?;
    let methods = a
        .methods
        .iter()
        .map(|m| m.parse::<Method>().map_err(|e| usage(e.to_string())))
        .collect::<CliResult<Vec<_>>>()?;
    let d = load(&a.input)?;
    let needs_predictions = methods.iter().any(|m| matches!(m, Method::Online | Method::Offline));
    let needs_routing = methods.iter().any(|m| m.is_routing());
    let predictions = if needs_predictions {
        Some(predictions(&d, &a.source, a.zero_reward, crate::rng::derive_seed(seed, 1))?)
    } else {
        None
    };
    let heldout = if methods.contains(&Method::Offline) {
        let path = a
            .heldout
            .as_ref()
            .ok_or_else(|| usage("the offline method needs --heldout"))?;
        let h = load(path)?;
        let hp = self::predictions(&h, &a.source, a.zero_reward, crate::rng::derive_seed(seed, 2))?;
        Some(HeldOut {
            scores: hp.scores,
            deltas: empirical_deltas(&h, a.zero_reward)?,
            score_kind: hp.score_kind,
        })
    } else {
        None
    };
    let preferences = match (&a.preference_params, methods.contains(&Method::RouteLearned)) {
        (Some(p), true) => Some(preference_predictions(&d, p)?),
        (None, true) => return Err(usage("route-learned needs --preference-params")),
        _ => None,
    };
    let cfg = SweepConfig {
        per_query_min: default_min(&d, a.min),
        monotone_mode: a.mode.into(),
        zero_reward: a.zero_reward,
        n_bins: a.bins,
        ci: CiConfig {
            resamples: a.ci_resamples,
            level: a.ci_level,
            seed,
        },
        seed,
        predictions,
        heldout,
        preferences,
        routing_costs: if needs_routing {
            Some(RoutingCosts::new(a.weak_cost, a.strong_cost).map_err(|e| usage(e.to_string()))?)
        } else {
            None
        },
    };
    if methods.iter().any(|m| !m.is_routing()) {
        for &b in &a.budget {
            budget_spec(b, d.bmax(), cfg.per_query_min)?;
        }
    }
    let report = budget_sweep(&d, &methods, &a.budget, &cfg)?;
    let format = a.format.unwrap_or(
        match a.out.output.as_ref().and_then(|p| p.extension()).and_then(|e| e.to_str()) {
            Some("json") => FormatArg::Json,
            _ => FormatArg::Csv,
        },
    );
    let mut buf = Vec::new();
    match format {
        FormatArg::Csv => report.write_csv(&mut buf)?,
        FormatArg::Json => {
            buf.extend(report.to_json()?.into_bytes());
            buf.push(b'\n');
        }
    }
    emit(&a.out, &buf, stdout)?;
    Ok(json!({ "rows": report.rows.len() }))
}

fn metrics(a: &MetricsArgs, stdout: &mut dyn Write) -> CliResult<serde_json::Value> {
    check_budgets(&a.budget)?;
    let d = load(&a.input)?;
    let params = load_params(&a.params)?;
    let features = d.features()?;
    let result = match params.head {
        Head::Lambda | Head::Preference => {
            let truths: Vec<f64> = if params.head == Head::Lambda {
                d.pools()
                    .map(|p| empirical_lambda(p).map(|l| l.value()))
                    .collect::<crate::Result<_>>()?
            } else {
                routing_preferences(&d)?.iter().map(|p| p.value()).collect()
            };
            let preds = features
                .iter()
                .map(|x| predict_probability(&params, x))
                .collect::<crate::Result<Vec<_>>>()?;
            let loss = match a.loss.unwrap_or(LossArg::Xent) {
                LossArg::Mse => LossKind::Mse,
                LossArg::Xent => LossKind::Xent,
            };
            let m = predictor_metrics(&preds, &truths, loss)?;
            let calibration = calibration_curve(&preds, &truths, a.calibration_bins).map_err(|e| usage(e.to_string()))?;
            let breakdown = if a.budget.is_empty() {
                None
            } else if params.head == Head::Preference {
                return Err(usage("--budget breakdown needs a lambda-head predictor"));
            } else {
                let lambdas = preds.iter().map(|&p| SuccessProb::new(p)).collect::<crate::Result<Vec<_>>>()?;
                let curves = Predictions::from_lambdas(&lambdas, d.bmax()).curves;
                let allocs = a
                    .budget
                    .iter()
                    .map(|&b| {
                        let spec = BudgetSpec::new(b, d.bmax(), 0).map_err(|e| usage(e.to_string()))?;
                        Ok((b, allocate_greedy(&curves, &spec, MonotoneMode::Envelope)?.budgets))
                    })
                    .collect::<CliResult<Vec<_>>>()?;
                Some(bin_breakdown(&allocs, &preds)?)
            };
            json!({ "loss": loss, "metrics": m, "calibration": calibration, "breakdown": breakdown })
        }
        Head::DeltaVector => {
            if a.loss.is_some_and(|l| matches!(l, LossArg::Xent)) {
                return Err(usage("delta-vector predictors are scored with mse"));
            }
            let truths = empirical_deltas(&d, 0.0)?;
            let preds = features
                .iter()
                .map(|x| match predict(&params, x)? {
                    Prediction::Curve(c) => Ok(c),
                    _ => unreachable!("delta-vector head yields curves"),
                })
                .collect::<crate::Result<Vec<_>>>()?;
            let m = predictor_metrics_curves(&preds, &truths)?;
            json!({ "loss": LossKind::Mse, "metrics": m })
        }
    };
    emit_json(&a.out, &result, stdout)?;
    Ok(json!({ "queries": d.len() }))
}

fn tranches(a: &TranchesArgs, stdout: &mut dyn Write) -> CliResult<serde_json::Value> {
    let d = load(&a.input)?;
    let subset = select_tranches(&d, a.low, a.high).map_err(|e| match e {
        Error::InvalidArgument(m) if m.starts_with("tranche fractions") => usage(m),
        other => CliError::Data(other),
    })?;
    let mut buf = Vec::new();
    subset.write_jsonl(&mut buf)?;
    emit(&a.out, &buf, stdout)?;
    Ok(json!({ "input_queries": d.len(), "selected": subset.len() }))
}

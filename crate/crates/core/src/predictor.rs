//! Lightweight difficulty predictors trained on per-query feature vectors.
//!
//! A predictor is either a linear map or a one-hidden-layer tanh MLP,
//! followed by one of three heads: a raw marginal-reward vector (trained
//! with squared error), or a logistic success/preference probability
//! (trained with soft-label cross-entropy).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::domain::{MarginalRewardCurve, SuccessProb};
use crate::error::{Error, Result};
use crate::estimation::PreferenceProb;
use crate::rng::rng_for;
use crate::scalar::logistic;

pub const PARAMS_SCHEMA_VERSION: u32 = 1;

/// Cross-entropy clamps predictions into `[XENT_EPS, 1 - XENT_EPS]`.
pub const XENT_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Architecture {
    Linear,
    Mlp { hidden: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Head {
    DeltaVector,
    Lambda,
    Preference,
}

impl Head {
    fn is_logistic(self) -> bool {
        !matches!(self, Head::DeltaVector)
    }
}

/// Dense layer `y = W x + b` with `W` stored row-major (`rows` outputs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.cols)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorParams {
    pub schema_version: u32,
    pub architecture: Architecture,
    pub head: Head,
    pub input_dim: usize,
    pub output_dim: usize,
    pub layers: Vec<DenseLayer>,
}

impl PredictorParams {
    /// All-zero parameters of the right shapes.
    pub fn zeros(architecture: Architecture, head: Head, input_dim: usize, output_dim: usize) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::InvalidArgument("predictor dimensions must be positive".into()));
        }
        if head.is_logistic() && output_dim != 1 {
            return Err(Error::InvalidArgument(format!(
                "{head:?} head has one output, got output_dim = {output_dim}"
            )));
        }
        let layers = match architecture {
            Architecture::Linear => vec![DenseLayer::zeros(output_dim, input_dim)],
            Architecture::Mlp { hidden } => {
                if hidden == 0 {
                    return Err(Error::InvalidArgument("MLP width must be positive".into()));
                }
                vec![DenseLayer::zeros(hidden, input_dim), DenseLayer::zeros(output_dim, hidden)]
            }
        };
        Ok(Self {
            schema_version: PARAMS_SCHEMA_VERSION,
            architecture,
            head,
            input_dim,
            output_dim,
            layers,
        })
    }

    /// Weights uniform in `±1/√fan_in`, biases zero.
    pub fn initialized(
        architecture: Architecture,
        head: Head,
        input_dim: usize,
        output_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut params = Self::zeros(architecture, head, input_dim, output_dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut params.layers {
            let bound = 1.0 / (layer.cols as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-bound..=bound);
            }
        }
        Ok(params)
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameters flattened layer by layer, weights before biases.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_parameters());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_parameters() {
            return Err(Error::LengthMismatch {
                expected: self.num_parameters(),
                got: flat.len(),
            });
        }
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let params: Self = serde_json::from_str(text)?;
        if params.schema_version != PARAMS_SCHEMA_VERSION {
            return Err(Error::VersionMismatch {
                found: params.schema_version,
                expected: PARAMS_SCHEMA_VERSION,
            });
        }
        params.validate_shapes()?;
        Ok(params)
    }

    fn validate_shapes(&self) -> Result<()> {
        let expected = Self::zeros(self.architecture, self.head, self.input_dim, self.output_dim)?;
        let ok = expected.layers.len() == self.layers.len()
            && expected.layers.iter().zip(&self.layers).all(|(e, l)| {
                e.rows == l.rows
                    && e.cols == l.cols
                    && l.weights.len() == l.rows * l.cols
                    && l.bias.len() == l.rows
            });
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument("predictor weight shapes do not match architecture".into()))
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Pre-activation outputs plus the hidden activations (MLP only).
    fn forward_parts(&self, x: &[f64]) -> (Vec<f64>, Option<Vec<f64>>) {
        match self.architecture {
            Architecture::Linear => (self.layers[0].forward(x), None),
            Architecture::Mlp { .. } => {
                let h: Vec<f64> = self.layers[0].forward(x).into_iter().map(f64::tanh).collect();
                (self.layers[1].forward(&h), Some(h))
            }
        }
    }

    /// Head output: the raw vector, or a one-element probability for logistic heads.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let (mut z, _) = self.forward_parts(x);
        if self.head.is_logistic() {
            z[0] = logistic(z[0]).clamp(f64::EPSILON, 1.0 - f64::EPSILON);
        }
        Ok(z)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Curve(MarginalRewardCurve<f64>),
    Lambda(SuccessProb<f64>),
    Preference(PreferenceProb<f64>),
}

pub fn predict(params: &PredictorParams, features: &[f64]) -> Result<Prediction> {
    let out = params.forward(features)?;
    Ok(match params.head {
        Head::DeltaVector => Prediction::Curve(MarginalRewardCurve::new(out)),
        Head::Lambda => Prediction::Lambda(SuccessProb::new(out[0])?),
        Head::Preference => Prediction::Preference(PreferenceProb::new(out[0])?),
    })
}

/// Probability output of a logistic head.
pub fn predict_probability(params: &PredictorParams, features: &[f64]) -> Result<f64> {
    if !params.head.is_logistic() {
        return Err(Error::InvalidArgument("predictor has a delta-vector head".into()));
    }
    Ok(params.forward(features)?[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub architecture: Architecture,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Linear,
            learning_rate: 0.1,
            epochs: 200,
            batch_size: 32,
            seed: 0,
            l2: 0.0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch size must be at least 1".into()));
        }
        if self.l2.is_nan() || self.l2 < 0.0 {
            return Err(Error::InvalidArgument("l2 must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Mse,
    Xent,
}

/// Borrowed training examples: one feature row and one target row each.
#[derive(Debug, Clone, Copy)]
pub struct Examples<'a> {
    pub features: &'a [Vec<f64>],
    pub targets: &'a [Vec<f64>],
}

/// Mean loss over `examples` (plus `l2/2 · Σ w²` over weights) and its gradient
/// in [`PredictorParams::to_flat`] order.
///
/// `Mse` sums squared error over output components; `Xent` is the soft-label
/// cross-entropy of the logistic output, clamped at [`XENT_EPS`].
pub fn loss_and_gradient(
    params: &PredictorParams,
    examples: Examples<'_>,
    indices: &[usize],
    loss: LossKind,
    l2: f64,
) -> (f64, Vec<f64>) {
    let mut grads: Vec<DenseLayer> = params
        .layers
        .iter()
        .map(|l| DenseLayer::zeros(l.rows, l.cols))
        .collect();
    let mut total = 0.0;
    let scale = 1.0 / indices.len().max(1) as f64;

    for &i in indices {
        let x = &examples.features[i];
        let t = &examples.targets[i];
        let (z, hidden) = params.forward_parts(x);
        let mut dz = vec![0.0; z.len()];
        match loss {
            LossKind::Mse => {
                for k in 0..z.len() {
                    let e = z[k] - t[k];
                    total += e * e;
                    dz[k] = 2.0 * e;
                }
            }
            LossKind::Xent => {
                let raw = logistic(z[0]);
                let p = raw.clamp(XENT_EPS, 1.0 - XENT_EPS);
                total -= t[0] * p.ln() + (1.0 - t[0]) * (1.0 - p).ln();
                dz[0] = if raw == p { p - t[0] } else { 0.0 };
            }
        }

        match hidden {
            None => accumulate(&mut grads[0], &dz, x),
            Some(h) => {
                accumulate(&mut grads[1], &dz, &h);
                let out = &params.layers[1];
                let dh: Vec<f64> = (0..out.cols)
                    .map(|c| {
                        let back: f64 = (0..out.rows).map(|r| out.weights[r * out.cols + c] * dz[r]).sum();
                        back * (1.0 - h[c] * h[c])
                    })
                    .collect();
                accumulate(&mut grads[0], &dh, x);
            }
        }
    }

    let mut value = total * scale;
    let mut flat = Vec::with_capacity(params.num_parameters());
    for (g, l) in grads.iter().zip(&params.layers) {
        for (gw, w) in g.weights.iter().zip(&l.weights) {
            flat.push(gw * scale + l2 * w);
        }
        flat.extend(g.bias.iter().map(|gb| gb * scale));
        value += 0.5 * l2 * l.weights.iter().map(|w| w * w).sum::<f64>();
    }
    (value, flat)
}

fn accumulate(g: &mut DenseLayer, delta: &[f64], input: &[f64]) {
    for (r, &d) in delta.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        for (gw, &v) in g.weights[r * g.cols..(r + 1) * g.cols].iter_mut().zip(input) {
            *gw += d * v;
        }
        g.bias[r] += d;
    }
}

/// Mean loss over every example, without regularization.
pub fn dataset_loss(params: &PredictorParams, examples: Examples<'_>, loss: LossKind) -> f64 {
    let all: Vec<usize> = (0..examples.features.len()).collect();
    loss_and_gradient(params, examples, &all, loss, 0.0).0
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: PredictorParams,
    /// Full-dataset loss before training and after each epoch.
    pub loss_history: Vec<f64>,
}

fn check_examples(features: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<usize> {
    if features.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if targets.len() != features.len() {
        return Err(Error::LengthMismatch {
            expected: features.len(),
            got: targets.len(),
        });
    }
    let dim = features[0].len();
    if dim == 0 {
        return Err(Error::InvalidArgument("feature vectors are empty".into()));
    }
    for f in features {
        if f.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: f.len(),
            });
        }
    }
    Ok(dim)
}

/// Mini-batch gradient descent with a fixed learning rate; batches are
/// reshuffled every epoch from the config seed.
fn fit(
    head: Head,
    features: &[Vec<f64>],
    targets: &[Vec<f64>],
    loss: LossKind,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let input_dim = check_examples(features, targets)?;
    let output_dim = targets[0].len();
    if let Some(t) = targets.iter().find(|t| t.len() != output_dim) {
        return Err(Error::LengthMismatch {
            expected: output_dim,
            got: t.len(),
        });
    }
    let mut params =
        PredictorParams::initialized(config.architecture, head, input_dim, output_dim, config.seed)?;
    let examples = Examples { features, targets };
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut shuffle_rng = rng_for(config.seed, 1);
    let mut flat = params.to_flat();
    let mut history = Vec::with_capacity(config.epochs + 1);
    history.push(dataset_loss(&params, examples, loss));

    for _ in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(config.batch_size) {
            let (_, grad) = loss_and_gradient(&params, examples, batch, loss, config.l2);
            for (w, g) in flat.iter_mut().zip(&grad) {
                *w -= config.learning_rate * g;
            }
            params.set_flat(&flat)?;
        }
        history.push(dataset_loss(&params, examples, loss));
    }
    Ok(TrainOutcome {
        params,
        loss_history: history,
    })
}

/// Regresses marginal-reward vectors with squared error.
pub fn train_mse(
    dataset: &[(Vec<f64>, MarginalRewardCurve<f64>)],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let features: Vec<Vec<f64>> = dataset.iter().map(|(f, _)| f.clone()).collect();
    let targets: Vec<Vec<f64>> = dataset.iter().map(|(_, d)| d.deltas().to_vec()).collect();
    if targets.first().is_some_and(|t| t.is_empty()) {
        return Err(Error::InvalidArgument("target curves are empty".into()));
    }
    fit(Head::DeltaVector, &features, &targets, LossKind::Mse, config)
}

fn soft_labels(values: impl Iterator<Item = f64>) -> Result<Vec<Vec<f64>>> {
    values
        .map(|v| {
            if (0.0..=1.0).contains(&v) {
                Ok(vec![v])
            } else {
                Err(Error::InvalidProbability(v))
            }
        })
        .collect()
}

/// Fits a logistic success-probability head with soft-label cross-entropy.
pub fn train_xent(dataset: &[(Vec<f64>, SuccessProb<f64>)], config: &TrainConfig) -> Result<TrainOutcome> {
    let features: Vec<Vec<f64>> = dataset.iter().map(|(f, _)| f.clone()).collect();
    let targets = soft_labels(dataset.iter().map(|(_, p)| p.value()))?;
    fit(Head::Lambda, &features, &targets, LossKind::Xent, config)
}

/// Same objective as [`train_xent`], for strong-over-weak preference targets.
pub fn train_preference(
    dataset: &[(Vec<f64>, PreferenceProb<f64>)],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let features: Vec<Vec<f64>> = dataset.iter().map(|(f, _)| f.clone()).collect();
    let targets = soft_labels(dataset.iter().map(|(_, p)| p.value()))?;
    fit(Head::Preference, &features, &targets, LossKind::Xent, config)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    GaussianOnLambda,
    GaussianOnLogit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub sigma: f64,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise sigma must be >= 0, got {sigma}")));
        }
        Ok(Self { kind, sigma })
    }

    pub fn none() -> Self {
        Self {
            kind: NoiseKind::GaussianOnLambda,
            sigma: 0.0,
        }
    }
}

/// A simulated predictor: the true λ perturbed by Gaussian noise, clamped to [0, 1].
pub fn noisy_oracle(true_lambda: SuccessProb<f64>, noise: &NoiseSpec, seed: u64) -> SuccessProb<f64> {
    if noise.sigma == 0.0 {
        return true_lambda;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps: f64 = rng.sample(StandardNormal);
    let lam = true_lambda.value();
    let perturbed = match noise.kind {
        NoiseKind::GaussianOnLambda => lam + noise.sigma * eps,
        NoiseKind::GaussianOnLogit => {
            if lam <= 0.0 || lam >= 1.0 {
                lam
            } else {
                logistic((lam / (1.0 - lam)).ln() + noise.sigma * eps)
            }
        }
    };
    SuccessProb::saturating(perturbed)
}

/// [`noisy_oracle`] over a batch, one derived seed per query.
pub fn noisy_oracle_batch(lambdas: &[SuccessProb<f64>], noise: &NoiseSpec, seed: u64) -> Vec<SuccessProb<f64>> {
    lambdas
        .iter()
        .enumerate()
        .map(|(i, &l)| noisy_oracle(l, noise, crate::rng::derive_seed(seed, i as u64)))
        .collect()
}

//! Linear decision models and logistic-regression training.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` inside the loss.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("dimension mismatch: model width {expected}, input width {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("no training examples")]
    Empty,
    #[error("model schema `{found}` does not match encoding schema `{expected}`")]
    Schema { expected: String, found: String },
    #[error("model json: {0}")]
    Json(String),
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Affine decision model `σ(w·x + b)`; the shared representation of student
/// and teacher models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn zeros(width: usize) -> Self {
        Self {
            weights: vec![0.0; width],
            bias: 0.0,
        }
    }

    pub fn new(weights: Vec<f64>, bias: f64) -> Self {
        Self { weights, bias }
    }

    pub fn width(&self) -> usize {
        self.weights.len()
    }

    pub fn is_finite(&self) -> bool {
        self.bias.is_finite() && self.weights.iter().all(|w| w.is_finite())
    }

    fn check(&self, features: &[f64]) -> Result<(), ModelError> {
        if features.len() != self.weights.len() {
            return Err(ModelError::Dimension {
                expected: self.weights.len(),
                got: features.len(),
            });
        }
        Ok(())
    }

    pub fn score(&self, features: &[f64]) -> Result<f64, ModelError> {
        self.check(features)?;
        Ok(dot(&self.weights, features) + self.bias)
    }

    /// `σ(w·x + b)`.
    pub fn predict_prob(&self, features: &[f64]) -> Result<f64, ModelError> {
        self.score(features).map(sigmoid)
    }

    /// Weights followed by the bias, i.e. the bias as an extra coordinate.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.push(self.bias);
        p
    }

    /// Squared euclidean distance over weights and bias.
    pub fn distance_sq(&self, other: &LinearModel) -> f64 {
        let dw: f64 = self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        dw + (self.bias - other.bias).powi(2)
    }

    pub fn to_json(&self, schema_hash: &str) -> String {
        serde_json::to_string(&ModelFile {
            weights: self.weights.clone(),
            bias: self.bias,
            schema_hash: schema_hash.to_string(),
        })
        .expect("model serializes")
    }

    /// Parses a model saved by [`LinearModel::to_json`], refusing models
    /// trained against another encoding.
    pub fn from_json(text: &str, expected_schema: &str) -> Result<Self, ModelError> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| ModelError::Json(e.to_string()))?;
        if file.schema_hash != expected_schema {
            return Err(ModelError::Schema {
                expected: expected_schema.to_string(),
                found: file.schema_hash,
            });
        }
        Ok(Self::new(file.weights, file.bias))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    weights: Vec<f64>,
    bias: f64,
    schema_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    pub label: u8,
    pub z: u8,
}

impl LabeledExample {
    pub fn new(features: Vec<f64>, label: u8, z: u8) -> Self {
        Self { features, label, z }
    }
}

/// Per-example binary cross-entropy and its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub loss: f64,
    pub grad_w: Vec<f64>,
    pub grad_b: f64,
}

/// BCE loss `−[y log p + (1−y) log(1−p)]` with gradient `(p − y)·x`.
pub fn loss_gradient(model: &LinearModel, example: &LabeledExample) -> Result<LossGradient, ModelError> {
    let p = model.predict_prob(&example.features)?;
    let y = f64::from(example.label);
    let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let loss = -(y * pc.ln() + (1.0 - y) * (1.0 - pc).ln());
    let r = p - y;
    Ok(LossGradient {
        loss,
        grad_w: example.features.iter().map(|x| r * x).collect(),
        grad_b: r,
    })
}

/// One learner update `w − η·∂L/∂w` on a single example. The input model is
/// left untouched.
pub fn sgd_step(model: &LinearModel, example: &LabeledExample, eta: f64) -> Result<LinearModel, ModelError> {
    let g = loss_gradient(model, example)?;
    Ok(LinearModel {
        weights: model
            .weights
            .iter()
            .zip(&g.grad_w)
            .map(|(w, gw)| w - eta * gw)
            .collect(),
        bias: model.bias - eta * g.grad_b,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Batch {
    Full,
    SingleSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
    pub batch: Batch,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 400,
            l2: 1e-2,
            seed: 0,
            batch: Batch::Full,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 10.0) {
            return Err(ModelError::Config(format!(
                "learning_rate {} outside (0, 10]",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.epochs > 1_000_000 {
            return Err(ModelError::Config(format!("epochs {} outside [1, 1e6]", self.epochs)));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(ModelError::Config(format!("l2 {} must be non-negative", self.l2)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub model: LinearModel,
    /// Set when all labels agree; the model is then the constant base-rate fit.
    pub degenerate: bool,
    /// Objective value before training and after every epoch.
    pub loss_trace: Vec<f64>,
    /// Step size in effect at the end of training, after any backtracking.
    pub final_learning_rate: f64,
}

/// Objective value with its gradient at one model.
#[derive(Debug, Clone)]
pub(crate) struct Evaluation {
    pub value: f64,
    pub grad_w: Vec<f64>,
    pub grad_b: f64,
}

/// Mean BCE plus `l2·‖w‖²` (bias unregularized).
pub(crate) fn data_objective(model: &LinearModel, examples: &[LabeledExample], l2: f64) -> Evaluation {
    let n = examples.len() as f64;
    let mut value = 0.0;
    let mut grad_w = vec![0.0; model.width()];
    let mut grad_b = 0.0;
    for ex in examples {
        let p = sigmoid(dot(&model.weights, &ex.features) + model.bias);
        let y = f64::from(ex.label);
        let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
        value -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
        let r = p - y;
        for (g, x) in grad_w.iter_mut().zip(&ex.features) {
            *g += r * x;
        }
        grad_b += r;
    }
    value /= n;
    grad_b /= n;
    for (g, w) in grad_w.iter_mut().zip(&model.weights) {
        *g = *g / n + 2.0 * l2 * w;
    }
    value += l2 * dot(&model.weights, &model.weights);
    Evaluation { value, grad_w, grad_b }
}

pub(crate) fn check_examples(examples: &[LabeledExample]) -> Result<usize, ModelError> {
    let first = examples.first().ok_or(ModelError::Empty)?;
    let width = first.features.len();
    for ex in examples {
        if ex.features.len() != width {
            return Err(ModelError::Dimension {
                expected: width,
                got: ex.features.len(),
            });
        }
    }
    Ok(width)
}

/// Constant model predicting the (single) observed label.
pub(crate) fn base_rate_model(width: usize, label: u8) -> LinearModel {
    let p = if label == 1 { 1.0 - PROB_EPS } else { PROB_EPS };
    LinearModel::new(vec![0.0; width], logit(p))
}

/// Full-batch gradient descent from the zero model. A step that would raise
/// the objective is retried at half the step size, so the returned trace is
/// non-increasing.
pub(crate) fn descend<F>(width: usize, config: &TrainConfig, mut objective: F) -> FitOutcome
where
    F: FnMut(&LinearModel) -> Evaluation,
{
    let mut model = LinearModel::zeros(width);
    let mut current = objective(&model);
    let mut lr = config.learning_rate;
    let mut trace = Vec::with_capacity(config.epochs + 1);
    trace.push(current.value);
    'epochs: for _ in 0..config.epochs {
        loop {
            let candidate = LinearModel {
                weights: model
                    .weights
                    .iter()
                    .zip(&current.grad_w)
                    .map(|(w, g)| w - lr * g)
                    .collect(),
                bias: model.bias - lr * current.grad_b,
            };
            let eval = objective(&candidate);
            if eval.value <= current.value {
                model = candidate;
                current = eval;
                break;
            }
            lr *= 0.5;
            if lr < 1e-12 {
                break 'epochs;
            }
        }
        trace.push(current.value);
    }
    FitOutcome {
        model,
        degenerate: false,
        loss_trace: trace,
        final_learning_rate: lr,
    }
}

fn single_sample_descent(examples: &[LabeledExample], config: &TrainConfig) -> FitOutcome {
    let width = examples[0].features.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut model = LinearModel::zeros(width);
    let mut trace = vec![data_objective(&model, examples, config.l2).value];
    let lr = config.learning_rate;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let ex = &examples[i];
            let r = sigmoid(dot(&model.weights, &ex.features) + model.bias) - f64::from(ex.label);
            for (w, x) in model.weights.iter_mut().zip(&ex.features) {
                *w -= lr * (r * x + 2.0 * config.l2 * *w);
            }
            model.bias -= lr * r;
        }
        trace.push(data_objective(&model, examples, config.l2).value);
    }
    FitOutcome {
        model,
        degenerate: false,
        loss_trace: trace,
        final_learning_rate: lr,
    }
}

/// Logistic regression by gradient descent on mean BCE + `l2·‖w‖²`.
///
/// Single-class input yields the constant base-rate model with
/// `degenerate = true`.
pub fn fit(examples: &[LabeledExample], config: &TrainConfig) -> Result<FitOutcome, ModelError> {
    config.validate()?;
    let width = check_examples(examples)?;
    if let Some(label) = single_label(examples) {
        return Ok(degenerate_outcome(examples, width, label, config));
    }
    Ok(match config.batch {
        Batch::Full => descend(width, config, |m| data_objective(m, examples, config.l2)),
        Batch::SingleSample => single_sample_descent(examples, config),
    })
}

pub(crate) fn single_label(examples: &[LabeledExample]) -> Option<u8> {
    let first = examples.first()?.label;
    examples.iter().all(|e| e.label == first).then_some(first)
}

pub(crate) fn degenerate_outcome(
    examples: &[LabeledExample],
    width: usize,
    label: u8,
    config: &TrainConfig,
) -> FitOutcome {
    let model = base_rate_model(width, label);
    let value = data_objective(&model, examples, config.l2).value;
    FitOutcome {
        model,
        degenerate: true,
        loss_trace: vec![value],
        final_learning_rate: config.learning_rate,
    }
}

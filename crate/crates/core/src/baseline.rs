//! Comparison ensembles: unweighted majority voting and a logistic
//! regression stacker over the raw detector scores.

use serde::{Deserialize, Serialize};

use crate::error::{FuseError, Result};
use crate::score::{Label, ScoreMatrix};

/// Each score above 0.5 is a fake vote; ties go to fake.
pub fn majority_vote(features: &[f64]) -> Label {
    let fake = features.iter().filter(|&&s| s > 0.5).count();
    Label::majority(features.len() - fake, fake)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticConfig {
    pub learning_rate: f64,
    pub iterations: usize,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            learning_rate: 0.1,
            iterations: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    #[serde(default)]
    pub iterations: usize,
    #[serde(default)]
    pub final_loss: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn target(label: Label) -> f64 {
    match label {
        Label::Real => 0.0,
        Label::Fake => 1.0,
    }
}

fn linear(weights: &[f64], bias: f64, x: &[f64]) -> f64 {
    weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + bias
}

/// Mean log-loss of `(weights, bias)` over the matrix.
pub fn log_loss(matrix: &ScoreMatrix, weights: &[f64], bias: f64) -> f64 {
    let total: f64 = matrix
        .records()
        .iter()
        .map(|r| {
            let z = linear(weights, bias, &r.scores);
            softplus(z) - target(r.label) * z
        })
        .sum();
    total / matrix.n_samples() as f64
}

/// Analytic gradient of [`log_loss`]: `(d/dw, d/db)`.
pub fn log_loss_gradient(matrix: &ScoreMatrix, weights: &[f64], bias: f64) -> (Vec<f64>, f64) {
    let n = matrix.n_samples() as f64;
    let mut grad_w = vec![0.0; weights.len()];
    let mut grad_b = 0.0;
    for r in matrix.records() {
        let residual = sigmoid(linear(weights, bias, &r.scores)) - target(r.label);
        for (g, x) in grad_w.iter_mut().zip(&r.scores) {
            *g += residual * x;
        }
        grad_b += residual;
    }
    grad_w.iter_mut().for_each(|g| *g /= n);
    (grad_w, grad_b / n)
}

/// Full-batch gradient descent from zero. Returns the model and the loss
/// before every step followed by the final loss.
pub fn train_logistic(
    matrix: &ScoreMatrix,
    config: &LogisticConfig,
) -> Result<(LogisticModel, Vec<f64>)> {
    let (real, fake) = matrix.class_counts();
    if real == 0 || fake == 0 {
        return Err(FuseError::Precondition(
            "logistic regression needs both classes in the training matrix".into(),
        ));
    }
    let mut weights = vec![0.0; matrix.n_detectors()];
    let mut bias = 0.0;
    let mut trace = Vec::with_capacity(config.iterations + 1);
    for _ in 0..config.iterations {
        trace.push(log_loss(matrix, &weights, bias));
        let (gw, gb) = log_loss_gradient(matrix, &weights, bias);
        for (w, g) in weights.iter_mut().zip(&gw) {
            *w -= config.learning_rate * g;
        }
        bias -= config.learning_rate * gb;
    }
    let final_loss = log_loss(matrix, &weights, bias);
    trace.push(final_loss);
    Ok((
        LogisticModel {
            weights,
            bias,
            iterations: config.iterations,
            final_loss,
        },
        trace,
    ))
}

impl LogisticModel {
    /// Probability of fake and the thresholded label (fake iff p > 0.5).
    pub fn predict(&self, features: &[f64]) -> Result<(f64, Label)> {
        if features.len() != self.weights.len() {
            return Err(FuseError::Registry(format!(
                "logistic model expects {} scores, got {}",
                self.weights.len(),
                features.len()
            )));
        }
        let p = sigmoid(linear(&self.weights, self.bias, features));
        Ok((p, Label::from_score(p)))
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("finite model parameters");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<LogisticModel> {
        Ok(serde_json::from_str(text)?)
    }
}

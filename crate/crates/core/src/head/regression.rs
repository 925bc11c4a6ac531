use crate::error::{check_len, Error, Result};
use crate::head::{GradRule, PROB_FLOOR};
use crate::model::Layer;
use crate::numeric::{dense_forward, Activation, RealMat, Rng};

/// Standard deviation of the random initialization.
pub const RANDOM_INIT_STD: f64 = 0.05;

/// Sigmoid output layer trained online against reconstruction targets.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionHead {
    weights: RealMat,
    bias: Vec<f32>,
    alpha: f32,
    rule: GradRule,
    use_bias: bool,
}

fn check_alpha(alpha: f32) -> Result<()> {
    if alpha.is_finite() && alpha >= 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("learning rate {alpha} must be finite and non-negative")))
    }
}

impl RegressionHead {
    pub fn from_parts(
        weights: RealMat,
        bias: Vec<f32>,
        alpha: f32,
        rule: GradRule,
        use_bias: bool,
    ) -> Result<Self> {
        check_alpha(alpha)?;
        check_len("regression head bias", weights.rows(), bias.len())?;
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::Domain("head bias contains a non-finite value".into()));
        }
        if !use_bias && bias.iter().any(|&b| b != 0.0) {
            return Err(Error::Domain("bias-free head must carry a zero bias".into()));
        }
        Ok(RegressionHead {
            weights,
            bias,
            alpha,
            rule,
            use_bias,
        })
    }

    /// Starts from a copy of a frozen sigmoid layer.
    pub fn from_layer(layer: &Layer, alpha: f32, rule: GradRule) -> Result<Self> {
        if layer.activation() != Activation::Sigmoid {
            return Err(Error::Unsupported(format!(
                "regression head replaces a sigmoid layer, got {:?}",
                layer.activation()
            )));
        }
        RegressionHead::from_parts(layer.weights().clone(), layer.bias().to_vec(), alpha, rule, true)
    }

    /// Normal(0, 0.05) weights and zero bias.
    pub fn random(in_dim: usize, out_dim: usize, alpha: f32, rule: GradRule, rng: &mut Rng) -> Result<Self> {
        let weights = RealMat::from_fn(out_dim, in_dim, |_, _| rng.normal(0.0, RANDOM_INIT_STD) as f32);
        RegressionHead::from_parts(weights, vec![0.0; out_dim], alpha, rule, true)
    }

    /// Drops the bias term: zeroes it and stops updating it.
    pub fn without_bias(mut self) -> Self {
        self.bias.iter_mut().for_each(|b| *b = 0.0);
        self.use_bias = false;
        self
    }

    pub fn weights(&self) -> &RealMat {
        &self.weights
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub fn alpha(&self) -> f32 {
        self.alpha
    }

    pub fn set_alpha(&mut self, alpha: f32) -> Result<()> {
        check_alpha(alpha)?;
        self.alpha = alpha;
        Ok(())
    }

    pub fn rule(&self) -> GradRule {
        self.rule
    }

    pub fn uses_bias(&self) -> bool {
        self.use_bias
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn predict(&self, a: &[f32]) -> Result<Vec<f32>> {
        dense_forward(&self.weights, &self.bias, a, Activation::Sigmoid)
    }

    /// Per-output error signal for the configured rule.
    pub fn deltas(&self, prediction: &[f32], target: &[f32]) -> Vec<f32> {
        prediction
            .iter()
            .zip(target)
            .map(|(&p, &t)| self.rule.delta(p, t))
            .collect()
    }

    /// One SGD step on a single `(a, target)` pair; returns the mean binary
    /// cross-entropy of the prediction made before the step.
    pub fn update(&mut self, a: &[f32], target: &[f32]) -> Result<f64> {
        check_len("regression target", self.out_dim(), target.len())?;
        if let Some(t) = target.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::Domain(format!("regression target {t} outside [0, 1]")));
        }
        let prediction = self.predict(a)?;
        let loss = mean_bce(&prediction, target);
        let deltas = self.deltas(&prediction, target);
        let alpha = self.alpha;
        for (i, &delta) in deltas.iter().enumerate() {
            let step = alpha * delta;
            for (w, &aj) in self.weights.row_mut(i).iter_mut().zip(a) {
                *w -= step * aj;
            }
            if self.use_bias {
                self.bias[i] -= step;
            }
        }
        Ok(loss)
    }
}

/// Mean over outputs of `−(x·ln x' + (1 − x)·ln(1 − x'))`.
pub fn mean_bce(prediction: &[f32], target: &[f32]) -> f64 {
    let sum: f64 = prediction
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = f64::from(p).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
            let t = f64::from(t);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    sum / prediction.len() as f64
}

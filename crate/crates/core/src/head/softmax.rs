use crate::error::{check_len, Error, Result};
use crate::head::PROB_FLOOR;
use crate::numeric::{argmax, softmax, RealMat};

pub const MAX_CLASSES: usize = 255;

/// Softmax regression over `k` classes of `d` features; `k` only grows.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxHead {
    weights: RealMat,
    bias: Vec<f32>,
    alpha: f32,
    use_bias: bool,
}

impl SoftmaxHead {
    /// One class, zero weights.
    pub fn new(features: usize, alpha: f32) -> Result<Self> {
        SoftmaxHead::with_classes(1, features, alpha)
    }

    pub fn with_classes(classes: usize, features: usize, alpha: f32) -> Result<Self> {
        if classes == 0 || classes > MAX_CLASSES {
            return Err(Error::Capacity(MAX_CLASSES));
        }
        if features == 0 {
            return Err(Error::Domain("softmax head needs at least one feature".into()));
        }
        SoftmaxHead::from_parts(RealMat::zeros(classes, features), vec![0.0; classes], alpha, true)
    }

    pub fn from_parts(weights: RealMat, bias: Vec<f32>, alpha: f32, use_bias: bool) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::Domain(format!("learning rate {alpha} must be finite and non-negative")));
        }
        if weights.rows() > MAX_CLASSES {
            return Err(Error::Capacity(MAX_CLASSES));
        }
        check_len("softmax head bias", weights.rows(), bias.len())?;
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::Domain("head bias contains a non-finite value".into()));
        }
        if !use_bias && bias.iter().any(|&b| b != 0.0) {
            return Err(Error::Domain("bias-free head must carry a zero bias".into()));
        }
        Ok(SoftmaxHead {
            weights,
            bias,
            alpha,
            use_bias,
        })
    }

    pub fn without_bias(mut self) -> Self {
        self.bias.iter_mut().for_each(|b| *b = 0.0);
        self.use_bias = false;
        self
    }

    pub fn classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn features(&self) -> usize {
        self.weights.cols()
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

    pub fn uses_bias(&self) -> bool {
        self.use_bias
    }

    pub fn logits(&self, f: &[f32]) -> Result<Vec<f32>> {
        self.weights.affine(&self.bias, f)
    }

    pub fn predict(&self, f: &[f32]) -> Result<Vec<f32>> {
        softmax(&self.logits(f)?)
    }

    pub fn predict_class(&self, f: &[f32]) -> Result<usize> {
        Ok(argmax(&self.logits(f)?))
    }

    /// `p − onehot(y)` together with `p`.
    pub fn gradient(&self, f: &[f32], y: usize) -> Result<(Vec<f32>, Vec<f32>)> {
        if y >= self.classes() {
            return Err(Error::Label {
                label: y,
                classes: self.classes(),
            });
        }
        let p = self.predict(f)?;
        let g = p
            .iter()
            .enumerate()
            .map(|(c, &pc)| if c == y { pc - 1.0 } else { pc })
            .collect();
        Ok((p, g))
    }

    /// One SGD step on `(f, y)`; returns `−ln p_y` of the prediction made before the step.
    pub fn update(&mut self, f: &[f32], y: usize) -> Result<f64> {
        let (p, g) = self.gradient(f, y)?;
        let loss = 0.0 - f64::from(p[y]).max(PROB_FLOOR).ln();
        let alpha = self.alpha;
        for (c, &gc) in g.iter().enumerate() {
            let step = alpha * gc;
            for (w, &fj) in self.weights.row_mut(c).iter_mut().zip(f) {
                *w -= step * fj;
            }
            if self.use_bias {
                self.bias[c] -= step;
            }
        }
        Ok(loss)
    }

    /// Appends a zero-initialized class and returns its index.
    pub fn add_class(&mut self) -> Result<usize> {
        if self.classes() >= MAX_CLASSES {
            return Err(Error::Capacity(MAX_CLASSES));
        }
        self.weights.push_zero_row();
        self.bias.push(0.0);
        Ok(self.classes() - 1)
    }
}

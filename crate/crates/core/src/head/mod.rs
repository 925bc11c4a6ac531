//! Trainable output heads updated one sample at a time.
//!
//! [`RegressionHead`] replaces the final sigmoid layer of a frozen network and
//! is fine-tuned on reconstruction targets. [`SoftmaxHead`] is a multi-class
//! softmax regression layer that grows a new output row whenever a new class
//! label shows up.

mod checkpoint;
mod gradcheck;
mod regression;
mod softmax;

use std::fmt;
use std::str::FromStr;

use crate::error::Error;

pub use checkpoint::{load_head, Head, HEAD_MAGIC};
pub use gradcheck::{
    grad_check, regression_rule_error, relative_error, GradCheck, RegressionLoss, FD_STEP, REL_ERROR_FLOOR,
};
pub use regression::RegressionHead;
pub use softmax::{SoftmaxHead, MAX_CLASSES};

pub const DEFAULT_ALPHA: f32 = 0.01;

/// Probabilities are clamped to `[PROB_FLOOR, 1 − PROB_FLOOR]` inside logarithms.
pub const PROB_FLOOR: f64 = 1e-7;

/// Per-output error signal used by [`RegressionHead::update`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum GradRule {
    /// `δ = x' − x`, the exact gradient of binary cross-entropy through a sigmoid.
    #[default]
    Bce,
    /// `δ = (x' − x)·x'·(1 − x')`, the exact gradient of half squared error through a sigmoid.
    MseSigmoid,
    /// `δ = (x' − x)·σ(x')·(1 − σ(x'))`, sigmoid applied to the already activated output.
    PaperLiteral,
}

impl GradRule {
    pub fn code(self) -> u8 {
        match self {
            GradRule::Bce => 0,
            GradRule::MseSigmoid => 1,
            GradRule::PaperLiteral => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(GradRule::Bce),
            1 => Some(GradRule::MseSigmoid),
            2 => Some(GradRule::PaperLiteral),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GradRule::Bce => "bce",
            GradRule::MseSigmoid => "mse-sigmoid",
            GradRule::PaperLiteral => "paper-literal",
        }
    }

    #[inline]
    pub(crate) fn delta(self, prediction: f32, target: f32) -> f32 {
        let err = prediction - target;
        match self {
            GradRule::Bce => err,
            GradRule::MseSigmoid => err * prediction * (1.0 - prediction),
            GradRule::PaperLiteral => {
                let s = crate::numeric::sigmoid(prediction);
                err * s * (1.0 - s)
            }
        }
    }
}

impl FromStr for GradRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "bce" => Ok(GradRule::Bce),
            "mse-sigmoid" => Ok(GradRule::MseSigmoid),
            "paper-literal" => Ok(GradRule::PaperLiteral),
            other => Err(Error::Domain(format!("unknown gradient rule {other:?}"))),
        }
    }
}

impl fmt::Display for GradRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

//! Finite-difference validation of the online update rules.
//!
//! Weights stay f32 (perturbed by `FD_STEP` in f32); losses are evaluated
//! in f64 from those f32 values, so the comparison measures the update rule
//! rather than f32 round-off in the loss.

use crate::error::{Error, Result};
use crate::head::{GradRule, RegressionHead, SoftmaxHead};
use crate::numeric::{RealMat, Rng};

pub const FD_STEP: f32 = 1e-3;

/// Gradients smaller than this are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

const REGRESSION_IN: usize = 16;
const REGRESSION_OUT: usize = 40;
const COORDS_PER_INSTANCE: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradCheck {
    Regression(GradRule),
    Softmax,
}

/// Loss whose exact gradient a regression rule is checked against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegressionLoss {
    /// `Σ_i −(x_i·ln x'_i + (1 − x_i)·ln(1 − x'_i))`
    Bce,
    /// `½ Σ_i (x'_i − x_i)²`
    HalfSquaredError,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Max relative error over `instances` random problems for the rule's matching loss.
pub fn grad_check(check: GradCheck, instances: usize, rng: &mut Rng) -> Result<f64> {
    match check {
        GradCheck::Regression(GradRule::Bce) => {
            Ok(regression_rule_error(GradRule::Bce, RegressionLoss::Bce, instances, rng))
        }
        GradCheck::Regression(GradRule::MseSigmoid) => Ok(regression_rule_error(
            GradRule::MseSigmoid,
            RegressionLoss::HalfSquaredError,
            instances,
            rng,
        )),
        GradCheck::Regression(GradRule::PaperLiteral) => Err(Error::Unsupported(
            "the paper-literal rule is not the gradient of any supported loss".into(),
        )),
        GradCheck::Softmax => Ok(softmax_error(instances, rng)),
    }
}

fn regression_loss(head: &RegressionHead, w: &[f64], b: &[f64], a: &[f32], t: &[f32], loss: RegressionLoss) -> f64 {
    let d = head.in_dim();
    (0..head.out_dim())
        .map(|i| {
            let z: f64 = w[i * d..(i + 1) * d]
                .iter()
                .zip(a)
                .map(|(&wij, &aj)| wij * f64::from(aj))
                .sum::<f64>()
                + b[i];
            let p = 1.0 / (1.0 + (-z).exp());
            let x = f64::from(t[i]);
            match loss {
                RegressionLoss::Bce => -(x * p.ln() + (1.0 - x) * (1.0 - p).ln()),
                RegressionLoss::HalfSquaredError => 0.5 * (p - x) * (p - x),
            }
        })
        .sum()
}

/// Checks an arbitrary (rule, loss) pairing; mismatched pairings are expected to fail.
pub fn regression_rule_error(rule: GradRule, loss: RegressionLoss, instances: usize, rng: &mut Rng) -> f64 {
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let weights = RealMat::from_fn(REGRESSION_OUT, REGRESSION_IN, |_, _| rng.normal(0.0, 0.3) as f32);
        let bias: Vec<f32> = (0..REGRESSION_OUT).map(|_| rng.normal(0.0, 0.5) as f32).collect();
        let head = RegressionHead::from_parts(weights, bias, 1.0, rule, true).expect("valid head");
        let a: Vec<f32> = (0..REGRESSION_IN).map(|_| rng.uniform_range(0.0, 2.0) as f32).collect();
        let t: Vec<f32> = (0..REGRESSION_OUT).map(|_| rng.uniform() as f32).collect();

        let prediction = head.predict(&a).expect("shapes match");
        let deltas = head.deltas(&prediction, &t);

        let w32 = head.weights().as_slice();
        let w64: Vec<f64> = w32.iter().map(|&v| f64::from(v)).collect();
        let b64: Vec<f64> = head.bias().iter().map(|&v| f64::from(v)).collect();
        let n_weights = w32.len();

        for _ in 0..COORDS_PER_INSTANCE {
            let coord = rng.below(n_weights + REGRESSION_OUT);
            let (analytic, numeric) = if coord < n_weights {
                let (i, j) = (coord / REGRESSION_IN, coord % REGRESSION_IN);
                let analytic = f64::from(deltas[i] * a[j]);
                let (plus, minus, step) = perturbed(w32[coord]);
                let mut w = w64.clone();
                w[coord] = plus;
                let lp = regression_loss(&head, &w, &b64, &a, &t, loss);
                w[coord] = minus;
                let lm = regression_loss(&head, &w, &b64, &a, &t, loss);
                (analytic, (lp - lm) / step)
            } else {
                let i = coord - n_weights;
                let analytic = f64::from(deltas[i]);
                let (plus, minus, step) = perturbed(head.bias()[i]);
                let mut b = b64.clone();
                b[i] = plus;
                let lp = regression_loss(&head, &w64, &b, &a, &t, loss);
                b[i] = minus;
                let lm = regression_loss(&head, &w64, &b, &a, &t, loss);
                (analytic, (lp - lm) / step)
            };
            worst = worst.max(relative_error(analytic, numeric));
        }
    }
    worst
}

/// `(w + h, w − h, actual distance)` with the perturbation applied in f32.
fn perturbed(w: f32) -> (f64, f64, f64) {
    let plus = f64::from(w + FD_STEP);
    let minus = f64::from(w - FD_STEP);
    (plus, minus, plus - minus)
}

fn softmax_loss(w: &[f64], b: &[f64], d: usize, f: &[f32], y: usize) -> f64 {
    let logits: Vec<f64> = b
        .iter()
        .enumerate()
        .map(|(c, &bc)| {
            w[c * d..(c + 1) * d]
                .iter()
                .zip(f)
                .map(|(&wcj, &fj)| wcj * f64::from(fj))
                .sum::<f64>()
                + bc
        })
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[y]
}

fn softmax_error(instances: usize, rng: &mut Rng) -> f64 {
    const D: usize = 5;
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let k = 1 + rng.below(5);
        let weights = RealMat::from_fn(k, D, |_, _| rng.normal(0.0, 1.0) as f32);
        let bias: Vec<f32> = (0..k).map(|_| rng.normal(0.0, 1.0) as f32).collect();
        let head = SoftmaxHead::from_parts(weights, bias, 1.0, true).expect("valid head");
        let f: Vec<f32> = (0..D).map(|_| rng.normal(0.0, 1.0) as f32).collect();
        let y = rng.below(k);
        let (_, g) = head.gradient(&f, y).expect("label in range");

        let w32 = head.weights().as_slice();
        let w64: Vec<f64> = w32.iter().map(|&v| f64::from(v)).collect();
        let b64: Vec<f64> = head.bias().iter().map(|&v| f64::from(v)).collect();

        for coord in 0..w32.len() + k {
            let (analytic, numeric) = if coord < w32.len() {
                let (c, j) = (coord / D, coord % D);
                let (plus, minus, step) = perturbed(w32[coord]);
                let mut w = w64.clone();
                w[coord] = plus;
                let lp = softmax_loss(&w, &b64, D, &f, y);
                w[coord] = minus;
                let lm = softmax_loss(&w, &b64, D, &f, y);
                (f64::from(g[c] * f[j]), (lp - lm) / step)
            } else {
                let c = coord - w32.len();
                let (plus, minus, step) = perturbed(head.bias()[c]);
                let mut b = b64.clone();
                b[c] = plus;
                let lp = softmax_loss(&w64, &b, D, &f, y);
                b[c] = minus;
                let lm = softmax_loss(&w64, &b, D, &f, y);
                (f64::from(g[c]), (lp - lm) / step)
            };
            worst = worst.max(relative_error(analytic, numeric));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_rule_matches_bce_loss() {
        let err = grad_check(GradCheck::Regression(GradRule::Bce), 100, &mut Rng::new(1)).unwrap();
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn mse_sigmoid_rule_matches_squared_error() {
        let err = grad_check(GradCheck::Regression(GradRule::MseSigmoid), 100, &mut Rng::new(2)).unwrap();
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn softmax_rule_matches_cross_entropy() {
        let err = grad_check(GradCheck::Softmax, 100, &mut Rng::new(3)).unwrap();
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn paper_literal_has_no_pairing() {
        assert!(matches!(
            grad_check(GradCheck::Regression(GradRule::PaperLiteral), 10, &mut Rng::new(4)),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn mismatched_pairing_fails() {
        let err = regression_rule_error(GradRule::PaperLiteral, RegressionLoss::Bce, 20, &mut Rng::new(5));
        assert!(err > 0.1, "{err}");
        let err = regression_rule_error(GradRule::Bce, RegressionLoss::HalfSquaredError, 20, &mut Rng::new(5));
        assert!(err > 0.1, "{err}");
    }

    #[test]
    fn deterministic_per_seed() {
        let a = grad_check(GradCheck::Softmax, 10, &mut Rng::new(9)).unwrap();
        let b = grad_check(GradCheck::Softmax, 10, &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
    }
}

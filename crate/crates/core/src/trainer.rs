//! Offline minibatch training: the autoencoder that becomes the frozen model,
//! and the batch softmax baseline the online classifier is compared against.

use crate::error::{check_len, Error, Result};
use crate::head::{relative_error, SoftmaxHead, FD_STEP};
use crate::model::{FrozenModel, Layer};
use crate::numeric::{softmax, Activation, RealMat, Rng};

/// Layer widths of the reference autoencoder; the 4-unit layer is the embedding.
pub const REFERENCE_ARCHITECTURE: [usize; 5] = [40, 16, 4, 16, 40];
pub const REFERENCE_EMBEDDING_INDEX: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    #[default]
    Mse,
    Bce,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub alpha: f32,
    pub seed: u64,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 32,
            alpha: 0.05,
            seed: 0,
            loss: LossKind::Mse,
        }
    }
}

/// Uniform-length inputs with optional dense class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<Vec<f32>>,
    labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f32>>, labels: Option<Vec<usize>>) -> Result<Self> {
        let dim = inputs.first().map(Vec::len).unwrap_or(0);
        if dim == 0 {
            return Err(Error::Domain("dataset needs at least one non-empty input".into()));
        }
        for x in &inputs {
            check_len("dataset input", dim, x.len())?;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain("dataset input contains a non-finite value".into()));
            }
        }
        if let Some(labels) = &labels {
            check_len("dataset labels", inputs.len(), labels.len())?;
            let k = labels.iter().max().map_or(0, |m| m + 1);
            let mut seen = vec![false; k];
            labels.iter().for_each(|&l| seen[l] = true);
            if let Some(gap) = seen.iter().position(|s| !s) {
                return Err(Error::Domain(format!("labels are not dense: class {gap} is missing")));
            }
        }
        Ok(Dataset { inputs, labels })
    }

    pub fn unlabeled(inputs: Vec<Vec<f32>>) -> Result<Self> {
        Dataset::new(inputs, None)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn inputs(&self) -> &[Vec<f32>] {
        &self.inputs
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn classes(&self) -> usize {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().max())
            .map_or(0, |m| m + 1)
    }
}

/// A trained artifact together with the loss it started from and its per-epoch curve.
#[derive(Debug, Clone, PartialEq)]
pub struct Trained<T> {
    pub model: T,
    pub initial_loss: f64,
    pub loss_curve: Vec<f64>,
}

impl<T> Trained<T> {
    /// `epoch,mean_loss` rows, epochs numbered from 1.
    pub fn loss_curve_csv(&self) -> String {
        let mut out = String::from("epoch,mean_loss\n");
        for (e, l) in self.loss_curve.iter().enumerate() {
            out.push_str(&format!("{},{}\n", e + 1, l));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
struct DenseParams {
    rows: usize,
    cols: usize,
    w: Vec<f32>,
    b: Vec<f32>,
    act: Activation,
}

impl DenseParams {
    fn forward(&self, x: &[f32], out: &mut Vec<f32>) {
        out.clear();
        out.extend(self.w.chunks_exact(self.cols).zip(&self.b).map(|(row, &b)| {
            let z = row.iter().zip(x).fold(0.0f32, |acc, (w, v)| acc + w * v) + b;
            self.act.apply(z)
        }));
    }
}

pub const RELU_BIAS_INIT: f32 = 0.1;

/// Mutable dense network used only during offline training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainableNetwork {
    layers: Vec<DenseParams>,
}

/// Per-layer `(dW, db)` in the layer's row-major layout.
pub type Gradients = Vec<(Vec<f32>, Vec<f32>)>;

impl TrainableNetwork {
    /// He-normal weights for relu layers, `1/sqrt(fan_in)` otherwise. Relu biases
    /// start slightly positive so fewer units are dead from the first batch.
    pub fn random(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut Rng) -> Self {
        assert!(sizes.len() >= 2, "a network needs an input and an output width");
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, pair)| {
                let (cols, rows) = (pair[0], pair[1]);
                let act = if i == last { output } else { hidden };
                let gain = if act == Activation::Relu { 2.0 } else { 1.0 };
                let std = (gain / cols as f64).sqrt();
                DenseParams {
                    rows,
                    cols,
                    w: (0..rows * cols).map(|_| rng.normal(0.0, std) as f32).collect(),
                    b: vec![if act == Activation::Relu { RELU_BIAS_INIT } else { 0.0 }; rows],
                    act,
                }
            })
            .collect();
        TrainableNetwork { layers }
    }

    pub fn from_model(model: &FrozenModel) -> Self {
        let layers = model
            .layers()
            .iter()
            .map(|l| DenseParams {
                rows: l.out_dim(),
                cols: l.in_dim(),
                w: l.weights().as_slice().to_vec(),
                b: l.bias().to_vec(),
                act: l.activation(),
            })
            .collect();
        TrainableNetwork { layers }
    }

    pub fn freeze(&self, embedding_index: usize) -> Result<FrozenModel> {
        let layers = self
            .layers
            .iter()
            .map(|p| Layer::new(RealMat::from_vec(p.rows, p.cols, p.w.clone())?, p.b.clone(), p.act))
            .collect::<Result<Vec<_>>>()?;
        FrozenModel::new(layers, embedding_index)
    }

    /// Fills every weight with `weight` and every bias with `bias`.
    pub fn set_parameters(&mut self, weight: f32, bias: f32) {
        for l in &mut self.layers {
            l.w.iter_mut().for_each(|w| *w = weight);
            l.b.iter_mut().for_each(|b| *b = bias);
        }
    }

    fn forward_all(&self, x: &[f32]) -> Vec<Vec<f32>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for layer in &self.layers {
            let mut out = Vec::with_capacity(layer.rows);
            layer.forward(acts.last().expect("input pushed"), &mut out);
            acts.push(out);
        }
        acts
    }

    pub fn forward(&self, x: &[f32]) -> Vec<f32> {
        self.forward_all(x).pop().expect("at least one layer")
    }

    fn zero_gradients(&self) -> Gradients {
        self.layers
            .iter()
            .map(|l| (vec![0.0; l.w.len()], vec![0.0; l.b.len()]))
            .collect()
    }

    /// Adds `scale · ∂loss/∂θ` for one sample into `grads` and returns the sample's
    /// mean per-output loss. The differentiated objective sums over outputs rather
    /// than averaging, so the step size does not shrink with the output width.
    fn accumulate(&self, x: &[f32], target: &[f32], loss: LossKind, scale: f32, grads: &mut Gradients) -> f64 {
        let acts = self.forward_all(x);
        let output = acts.last().expect("output");
        let last = self.layers.len() - 1;
        let out_act = self.layers[last].act;

        let mut delta: Vec<f32> = output
            .iter()
            .zip(target)
            .map(|(&y, &t)| match loss {
                LossKind::Mse => 2.0 * (y - t) * out_act.derivative_from_output(y),
                // exact for a sigmoid output; other activations fall back to the chain rule
                LossKind::Bce if out_act == Activation::Sigmoid => y - t,
                LossKind::Bce => {
                    let yc = y.clamp(1e-7, 1.0 - 1e-7);
                    (yc - t) / (yc * (1.0 - yc)) * out_act.derivative_from_output(y)
                }
            })
            .collect();
        let sample_loss = sample_loss(output, target, loss);

        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let input = &acts[li];
            let (gw, gb) = &mut grads[li];
            for (r, &d) in delta.iter().enumerate() {
                let sd = scale * d;
                gb[r] += sd;
                for (g, &a) in gw[r * layer.cols..(r + 1) * layer.cols].iter_mut().zip(input) {
                    *g += sd * a;
                }
            }
            if li > 0 {
                let prev_act = self.layers[li - 1].act;
                delta = (0..layer.cols)
                    .map(|c| {
                        let back: f32 = delta
                            .iter()
                            .enumerate()
                            .map(|(r, &d)| layer.w[r * layer.cols + c] * d)
                            .sum();
                        back * prev_act.derivative_from_output(input[c])
                    })
                    .collect();
            }
        }
        sample_loss
    }

    /// Batch-averaged gradient of the per-sample loss summed over outputs.
    pub fn gradients(&self, batch: &[(&[f32], &[f32])], loss: LossKind) -> Gradients {
        let mut grads = self.zero_gradients();
        let scale = 1.0 / batch.len() as f32;
        for (x, t) in batch {
            self.accumulate(x, t, loss, scale, &mut grads);
        }
        grads
    }

    fn apply(&mut self, grads: &Gradients, alpha: f32) {
        for (layer, (gw, gb)) in self.layers.iter_mut().zip(grads) {
            layer.w.iter_mut().zip(gw).for_each(|(w, g)| *w -= alpha * g);
            layer.b.iter_mut().zip(gb).for_each(|(b, g)| *b -= alpha * g);
        }
    }

    pub fn mean_loss(&self, data: &[Vec<f32>], loss: LossKind) -> f64 {
        data.iter()
            .map(|x| sample_loss(&self.forward(x), x, loss))
            .sum::<f64>()
            / data.len() as f64
    }
}

fn sample_loss(output: &[f32], target: &[f32], loss: LossKind) -> f64 {
    let n = output.len() as f64;
    output
        .iter()
        .zip(target)
        .map(|(&y, &t)| {
            let (y, t) = (f64::from(y), f64::from(t));
            match loss {
                LossKind::Mse => (y - t) * (y - t),
                LossKind::Bce => {
                    let y = y.clamp(1e-7, 1.0 - 1e-7);
                    -(t * y.ln() + (1.0 - t) * (1.0 - y).ln())
                }
            }
        })
        .sum::<f64>()
        / n
}

fn check_config(cfg: &TrainConfig, len: usize) -> Result<()> {
    if cfg.batch_size == 0 || cfg.batch_size > len {
        return Err(Error::Domain(format!(
            "batch size {} must be in 1..={len}",
            cfg.batch_size
        )));
    }
    if !(cfg.alpha.is_finite() && cfg.alpha > 0.0) {
        return Err(Error::Domain(format!("learning rate {} must be positive", cfg.alpha)));
    }
    Ok(())
}

fn converged(initial: f64, curve: &[f64]) -> Result<()> {
    match curve.last() {
        Some(&last) if !(last < initial || last <= 1e-12) => Err(Error::Convergence {
            first: initial,
            last,
            loss_curve: curve.to_vec(),
        }),
        _ => Ok(()),
    }
}

pub fn reference_network(rng: &mut Rng) -> TrainableNetwork {
    TrainableNetwork::random(&REFERENCE_ARCHITECTURE, Activation::Relu, Activation::Sigmoid, rng)
}

/// Minibatch SGD on reconstruction loss over the reference architecture.
pub fn train_autoencoder(data: &Dataset, cfg: &TrainConfig) -> Result<Trained<FrozenModel>> {
    check_len("autoencoder input", REFERENCE_ARCHITECTURE[0], data.dim())?;
    if data.len() < 500 {
        return Err(Error::Domain(format!(
            "autoencoder training needs at least 500 windows, got {}",
            data.len()
        )));
    }
    let mut rng = Rng::new(cfg.seed);
    let net = reference_network(&mut rng);
    let trained = train_network(net, data.inputs(), cfg, &mut rng)?;
    Ok(Trained {
        model: trained.model.freeze(REFERENCE_EMBEDDING_INDEX)?,
        initial_loss: trained.initial_loss,
        loss_curve: trained.loss_curve,
    })
}

/// Trains any network to reconstruct its inputs.
pub fn train_network(
    mut net: TrainableNetwork,
    inputs: &[Vec<f32>],
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<Trained<TrainableNetwork>> {
    check_config(cfg, inputs.len())?;
    let initial_loss = net.mean_loss(inputs, cfg.loss);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut grads = net.zero_gradients();
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.iter_mut().for_each(|(gw, gb)| {
                gw.iter_mut().for_each(|g| *g = 0.0);
                gb.iter_mut().for_each(|g| *g = 0.0);
            });
            let scale = 1.0 / batch.len() as f32;
            for &i in batch {
                epoch_loss += net.accumulate(&inputs[i], &inputs[i], cfg.loss, scale, &mut grads);
            }
            net.apply(&grads, cfg.alpha);
        }
        curve.push(epoch_loss / inputs.len() as f64);
    }
    converged(initial_loss, &curve)?;
    Ok(Trained {
        model: net,
        initial_loss,
        loss_curve: curve,
    })
}

fn softmax_loss(head: &SoftmaxHead, x: &[f32], y: usize) -> Result<f64> {
    let p = head.predict(x)?;
    Ok(-f64::from(p[y]).max(1e-7).ln())
}

/// Batch softmax regression from a zero-initialized head.
pub fn train_softmax_offline(data: &Dataset, cfg: &TrainConfig) -> Result<Trained<SoftmaxHead>> {
    let labels = data
        .labels()
        .ok_or_else(|| Error::Domain("offline softmax training needs labels".into()))?;
    check_config(cfg, data.len())?;
    let k = data.classes();
    let d = data.dim();
    let mut weights = RealMat::zeros(k, d);
    let mut bias = vec![0.0f32; k];
    let mut rng = Rng::new(cfg.seed);

    let snapshot = |w: &RealMat, b: &[f32]| SoftmaxHead::from_parts(w.clone(), b.to_vec(), cfg.alpha, true);
    let mean_loss = |head: &SoftmaxHead| -> Result<f64> {
        let mut total = 0.0;
        for (x, &y) in data.inputs().iter().zip(labels) {
            total += softmax_loss(head, x, y)?;
        }
        Ok(total / data.len() as f64)
    };
    let initial_loss = mean_loss(&snapshot(&weights, &bias)?)?;

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut gw = vec![0.0f32; k * d];
    let mut gb = vec![0.0f32; k];
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            gw.iter_mut().for_each(|g| *g = 0.0);
            gb.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f32;
            for &i in batch {
                let x = &data.inputs()[i];
                let y = labels[i];
                let p = softmax(&weights.affine(&bias, x)?)?;
                epoch_loss += -f64::from(p[y]).max(1e-7).ln();
                for (c, &pc) in p.iter().enumerate() {
                    let g = scale * (pc - if c == y { 1.0 } else { 0.0 });
                    gb[c] += g;
                    for (acc, &xj) in gw[c * d..(c + 1) * d].iter_mut().zip(x) {
                        *acc += g * xj;
                    }
                }
            }
            weights
                .as_mut_slice()
                .iter_mut()
                .zip(&gw)
                .for_each(|(w, g)| *w -= cfg.alpha * g);
            bias.iter_mut().zip(&gb).for_each(|(b, g)| *b -= cfg.alpha * g);
        }
        curve.push(epoch_loss / data.len() as f64);
    }
    converged(initial_loss, &curve)?;
    Ok(Trained {
        model: snapshot(&weights, &bias)?,
        initial_loss,
        loss_curve: curve,
    })
}

/// Pre-activations closer than this to a relu kink make central differences unreliable.
const KINK_MARGIN: f64 = 1e-2;

fn forward_f64(layers: &[DenseParams], params: &[(Vec<f64>, Vec<f64>)], x: &[f32]) -> (Vec<f64>, f64) {
    let mut h: Vec<f64> = x.iter().map(|&v| f64::from(v)).collect();
    let mut min_kink = f64::INFINITY;
    for (layer, (w, b)) in layers.iter().zip(params) {
        h = (0..layer.rows)
            .map(|r| {
                let z: f64 = w[r * layer.cols..(r + 1) * layer.cols]
                    .iter()
                    .zip(&h)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    + b[r];
                match layer.act {
                    Activation::Identity => z,
                    Activation::Relu => {
                        min_kink = min_kink.min(z.abs());
                        z.max(0.0)
                    }
                    Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
                }
            })
            .collect();
    }
    (h, min_kink)
}

fn squared_error_f64(output: &[f64], target: &[f32]) -> f64 {
    output.iter().zip(target).map(|(y, &t)| (y - f64::from(t)).powi(2)).sum()
}

/// Compares backprop against central differences of the squared-error loss on random
/// networks with the given layer widths; returns the max relative error.
pub fn backprop_grad_check(sizes: &[usize], instances: usize, rng: &mut Rng) -> f64 {
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < instances {
        let mut net = TrainableNetwork::random(sizes, Activation::Relu, Activation::Sigmoid, rng);
        for l in &mut net.layers {
            l.b.iter_mut().for_each(|b| *b = rng.normal(0.0, 0.5) as f32);
        }
        let x: Vec<f32> = (0..sizes[0]).map(|_| rng.uniform() as f32).collect();
        let t: Vec<f32> = (0..sizes[sizes.len() - 1]).map(|_| rng.uniform() as f32).collect();

        let params: Vec<(Vec<f64>, Vec<f64>)> = net
            .layers
            .iter()
            .map(|l| {
                (
                    l.w.iter().map(|&v| f64::from(v)).collect(),
                    l.b.iter().map(|&v| f64::from(v)).collect(),
                )
            })
            .collect();
        if forward_f64(&net.layers, &params, &x).1 < KINK_MARGIN {
            continue;
        }
        done += 1;

        let grads = net.gradients(&[(&x, &t)], LossKind::Mse);
        for (li, layer) in net.layers.iter().enumerate() {
            for idx in 0..layer.w.len() + layer.b.len() {
                let is_weight = idx < layer.w.len();
                let base = if is_weight { layer.w[idx] } else { layer.b[idx - layer.w.len()] };
                let plus = f64::from(base + FD_STEP);
                let minus = f64::from(base - FD_STEP);
                let eval = |v: f64| {
                    let mut p = params.clone();
                    if is_weight {
                        p[li].0[idx] = v;
                    } else {
                        p[li].1[idx - layer.w.len()] = v;
                    }
                    squared_error_f64(&forward_f64(&net.layers, &p, &x).0, &t)
                };
                let numeric = (eval(plus) - eval(minus)) / (plus - minus);
                let analytic = if is_weight {
                    grads[li].0[idx]
                } else {
                    grads[li].1[idx - layer.w.len()]
                };
                worst = worst.max(relative_error(f64::from(analytic), numeric));
            }
        }
    }
    worst
}

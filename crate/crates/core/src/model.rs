//! The frozen network and its input preprocessing.
//!
//! A [`FrozenModel`] is a chain of dense layers that never changes after it is
//! built or loaded. It exposes three prefixes of the same composition:
//! [`FrozenModel::encode`] (up to the embedding layer),
//! [`FrozenModel::forward_truncated`] (everything but the final layer) and
//! [`FrozenModel::forward`] (the whole chain).

use crate::codec::{put_f32s, Reader};
use crate::error::{check_len, Error, Result};
use crate::fan_sim::{project, StreamWindow, WINDOW_LEN};
use crate::numeric::{dense_forward, Activation, RealMat};

pub const MODEL_MAGIC: &[u8; 4] = b"TOLM";
pub const PREPROC_MAGIC: &[u8; 4] = b"TOLP";
pub const FORMAT_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    weights: RealMat,
    bias: Vec<f32>,
    activation: Activation,
}

impl Layer {
    pub fn new(weights: RealMat, bias: Vec<f32>, activation: Activation) -> Result<Self> {
        check_len("layer bias", weights.rows(), bias.len())?;
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::Domain("layer bias contains a non-finite value".into()));
        }
        Ok(Layer {
            weights,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn weights(&self) -> &RealMat {
        &self.weights
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn forward(&self, x: &[f32]) -> Result<Vec<f32>> {
        dense_forward(&self.weights, &self.bias, x, self.activation)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrozenModel {
    layers: Vec<Layer>,
    embedding_index: usize,
}

impl FrozenModel {
    pub fn new(layers: Vec<Layer>, embedding_index: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Domain("a model needs at least one layer".into()));
        }
        if layers.len() > u8::MAX as usize {
            return Err(Error::Domain(format!("{} layers exceed the limit of 255", layers.len())));
        }
        if embedding_index >= layers.len() {
            return Err(Error::Domain(format!(
                "embedding index {embedding_index} out of range for {} layers",
                layers.len()
            )));
        }
        for pair in layers.windows(2) {
            check_len("layer chain", pair[0].out_dim(), pair[1].in_dim())?;
        }
        if let Some(big) = layers
            .iter()
            .find(|l| l.in_dim() > u16::MAX as usize || l.out_dim() > u16::MAX as usize)
        {
            return Err(Error::Domain(format!(
                "layer {}x{} exceeds the 16-bit dimension limit",
                big.out_dim(),
                big.in_dim()
            )));
        }
        Ok(FrozenModel {
            layers,
            embedding_index,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn final_layer(&self) -> &Layer {
        self.layers.last().expect("model has at least one layer")
    }

    pub fn embedding_index(&self) -> usize {
        self.embedding_index
    }

    pub fn version(&self) -> u8 {
        FORMAT_VERSION
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.final_layer().out_dim()
    }

    pub fn embedding_dim(&self) -> usize {
        self.layers[self.embedding_index].out_dim()
    }

    /// Applies `layers[range]` in order.
    pub fn forward_range(&self, range: std::ops::Range<usize>, x: &[f32]) -> Result<Vec<f32>> {
        let mut layers = self.layers[range].iter();
        let first = match layers.next() {
            Some(l) => l.forward(x)?,
            None => return Ok(x.to_vec()),
        };
        layers.try_fold(first, |h, l| l.forward(&h))
    }

    pub fn forward(&self, x: &[f32]) -> Result<Vec<f32>> {
        self.forward_range(0..self.layers.len(), x)
    }

    pub fn encode(&self, x: &[f32]) -> Result<Vec<f32>> {
        check_len("model input", self.input_dim(), x.len())?;
        self.forward_range(0..self.embedding_index + 1, x)
    }

    /// Output of the penultimate layer: the activations an output head consumes.
    pub fn forward_truncated(&self, x: &[f32]) -> Result<Vec<f32>> {
        if self.layers.len() < 2 {
            return Err(Error::Unsupported(
                "truncated forward needs at least two layers".into(),
            ));
        }
        check_len("model input", self.input_dim(), x.len())?;
        self.forward_range(0..self.layers.len() - 1, x)
    }

    /// Encodes the model in the `TOLM` container.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.push(FORMAT_VERSION);
        out.push(self.layers.len() as u8);
        out.push(self.embedding_index as u8);
        out.push(0);
        for layer in &self.layers {
            out.extend_from_slice(&(layer.in_dim() as u16).to_le_bytes());
            out.extend_from_slice(&(layer.out_dim() as u16).to_le_bytes());
            out.push(layer.activation.code());
            put_f32s(&mut out, layer.weights.as_slice());
            put_f32s(&mut out, &layer.bias);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(MODEL_MAGIC)?;
        r.version(FORMAT_VERSION)?;
        let count_at = r.offset();
        let count = r.u8()? as usize;
        if count == 0 {
            return Err(r.error(count_at, "model has zero layers"));
        }
        let embed_at = r.offset();
        let embedding_index = r.u8()? as usize;
        if embedding_index >= count {
            return Err(r.error(
                embed_at,
                format!("embedding index {embedding_index} out of range for {count} layers"),
            ));
        }
        let reserved_at = r.offset();
        if r.u8()? != 0 {
            return Err(r.error(reserved_at, "reserved byte must be zero"));
        }
        let mut layers: Vec<Layer> = Vec::with_capacity(count);
        for i in 0..count {
            let header_at = r.offset();
            let in_dim = r.u16()? as usize;
            let out_dim = r.u16()? as usize;
            if in_dim == 0 || out_dim == 0 {
                return Err(r.error(header_at, format!("layer {i} has a zero dimension")));
            }
            if let Some(prev) = layers.last() {
                if prev.out_dim() != in_dim {
                    return Err(r.error(
                        header_at,
                        format!(
                            "layer {i} input {in_dim} does not match previous output {}",
                            prev.out_dim()
                        ),
                    ));
                }
            }
            let act_at = r.offset();
            let code = r.u8()?;
            let activation = Activation::from_code(code)
                .ok_or_else(|| r.error(act_at, format!("unknown activation code {code}")))?;
            let weights = r.f32_vec(in_dim * out_dim)?;
            let bias = r.f32_vec(out_dim)?;
            let weights =
                RealMat::from_vec(out_dim, in_dim, weights).map_err(|e| r.error(header_at, e.to_string()))?;
            layers.push(Layer::new(weights, bias, activation).map_err(|e| r.error(header_at, e.to_string()))?);
        }
        r.finish()?;
        FrozenModel::new(layers, embedding_index).map_err(|e| Error::Format {
            offset: 0,
            message: e.to_string(),
        })
    }
}

pub fn save_model(model: &FrozenModel) -> Vec<u8> {
    model.to_bytes()
}

pub fn load_model(bytes: &[u8]) -> Result<FrozenModel> {
    FrozenModel::from_bytes(bytes)
}

/// Mean squared difference between an input and its reconstruction.
pub fn reconstruction_error(x: &[f32], x_hat: &[f32]) -> Result<f64> {
    check_len("reconstruction", x.len(), x_hat.len())?;
    if x.is_empty() {
        return Err(Error::Shape {
            context: "reconstruction",
            expected: 1,
            actual: 0,
        });
    }
    let sum: f64 = x
        .iter()
        .zip(x_hat)
        .map(|(&a, &b)| {
            let d = f64::from(a) - f64::from(b);
            d * d
        })
        .sum();
    Ok(sum / x.len() as f64)
}

/// PCA projection of the three axes onto one, followed by clamped min-max scaling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preproc {
    pca_mean: [f32; 3],
    pca_axis: [f32; 3],
    minmax_lo: f32,
    minmax_hi: f32,
}

impl Preproc {
    pub fn new(pca_mean: [f32; 3], pca_axis: [f32; 3], minmax_lo: f32, minmax_hi: f32) -> Result<Self> {
        let all = pca_mean
            .iter()
            .chain(&pca_axis)
            .chain([&minmax_lo, &minmax_hi]);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("preprocessing parameters must be finite".into()));
        }
        let norm = pca_axis
            .iter()
            .map(|&a| f64::from(a) * f64::from(a))
            .sum::<f64>()
            .sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::Domain(format!("PCA axis norm {norm} is not 1")));
        }
        if !(minmax_hi > minmax_lo) {
            return Err(Error::Domain(format!(
                "min-max bounds [{minmax_lo}, {minmax_hi}] are empty"
            )));
        }
        Ok(Preproc {
            pca_mean,
            pca_axis,
            minmax_lo,
            minmax_hi,
        })
    }

    pub fn pca_mean(&self) -> [f32; 3] {
        self.pca_mean
    }

    pub fn pca_axis(&self) -> [f32; 3] {
        self.pca_axis
    }

    pub fn bounds(&self) -> (f32, f32) {
        (self.minmax_lo, self.minmax_hi)
    }

    pub fn project(&self, sample: &[f32; 3]) -> f32 {
        project(&self.pca_axis, &self.pca_mean, sample)
    }

    pub fn scale(&self, projected: f32) -> f32 {
        ((projected - self.minmax_lo) / (self.minmax_hi - self.minmax_lo)).clamp(0.0, 1.0)
    }

    /// One value in `[0, 1]` per timestep.
    pub fn preprocess(&self, window: &StreamWindow) -> Vec<f32> {
        let mut out = Vec::with_capacity(WINDOW_LEN);
        out.extend(window.samples.iter().map(|s| self.scale(self.project(s))));
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(37);
        out.extend_from_slice(PREPROC_MAGIC);
        out.push(FORMAT_VERSION);
        put_f32s(&mut out, &self.pca_mean);
        put_f32s(&mut out, &self.pca_axis);
        put_f32s(&mut out, &[self.minmax_lo, self.minmax_hi]);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(PREPROC_MAGIC)?;
        r.version(FORMAT_VERSION)?;
        let body_at = r.offset();
        let mean = [r.f32()?, r.f32()?, r.f32()?];
        let axis = [r.f32()?, r.f32()?, r.f32()?];
        let lo = r.f32()?;
        let hi = r.f32()?;
        r.finish()?;
        Preproc::new(mean, axis, lo, hi).map_err(|e| Error::Format {
            offset: body_at,
            message: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_model(n: usize) -> FrozenModel {
        let layer = Layer::new(RealMat::identity(n), vec![0.0; n], Activation::Identity).unwrap();
        FrozenModel::new(vec![layer], 0).unwrap()
    }

    fn two_layer() -> FrozenModel {
        let l0 = Layer::new(
            RealMat::from_vec(3, 2, vec![1.0, -1.0, 0.5, 0.5, 2.0, 0.0]).unwrap(),
            vec![0.1, 0.0, -0.2],
            Activation::Relu,
        )
        .unwrap();
        let l1 = Layer::new(
            RealMat::from_vec(2, 3, vec![0.3, -0.2, 0.1, 1.0, 1.0, 1.0]).unwrap(),
            vec![0.0, 0.5],
            Activation::Sigmoid,
        )
        .unwrap();
        FrozenModel::new(vec![l0, l1], 0).unwrap()
    }

    #[test]
    fn zero_layers_rejected() {
        assert!(FrozenModel::new(vec![], 0).is_err());
    }

    #[test]
    fn broken_chain_rejected() {
        let a = Layer::new(RealMat::zeros(3, 2), vec![0.0; 3], Activation::Relu).unwrap();
        let b = Layer::new(RealMat::zeros(2, 4), vec![0.0; 2], Activation::Relu).unwrap();
        assert!(matches!(FrozenModel::new(vec![a, b], 0), Err(Error::Shape { .. })));
    }

    #[test]
    fn identity_network() {
        let m = identity_model(4);
        let x = [0.1, -2.0, 3.5, 0.0];
        assert_eq!(m.forward(&x).unwrap(), x);
        assert_eq!(m.encode(&x).unwrap(), x);
        assert!(matches!(m.forward_truncated(&x), Err(Error::Unsupported(_))));
        assert!(m.forward(&[1.0]).is_err());
    }

    #[test]
    fn truncated_is_first_layer_of_two() {
        let m = two_layer();
        let x = [0.7, -0.3];
        let a = m.forward_truncated(&x).unwrap();
        assert_eq!(a, m.layers()[0].forward(&x).unwrap());
        assert_eq!(m.final_layer().forward(&a).unwrap(), m.forward(&x).unwrap());
    }

    #[test]
    fn reconstruction_error_examples() {
        assert_eq!(reconstruction_error(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        let e = reconstruction_error(&[1.0, 0.0, 1.0, 0.0], &[0.5; 4]).unwrap();
        assert!((e - 0.25).abs() < 1e-12);
        let x = [0.3, 0.9, 0.1];
        let y = [0.0, 0.4, 0.8];
        assert_eq!(
            reconstruction_error(&x, &y).unwrap(),
            reconstruction_error(&y, &x).unwrap()
        );
        assert!(reconstruction_error(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn model_roundtrip_and_golden_layout() {
        let m = two_layer();
        let bytes = save_model(&m);
        // header + 2 layer headers + (6+3) + (6+2) floats
        assert_eq!(bytes.len(), 8 + 2 * 5 + 4 * (9 + 8));
        assert_eq!(&bytes[..8], b"TOLM\x01\x02\x00\x00");
        assert_eq!(&bytes[8..13], &[2, 0, 3, 0, 1]);
        let back = load_model(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.layers()[0].out_dim(), 3);
        assert_eq!(back.layers()[1].in_dim(), 3);
        assert_eq!(save_model(&back), bytes);
    }

    #[test]
    fn corrupted_model_rejected() {
        let bytes = save_model(&two_layer());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(load_model(&bad), Err(Error::Format { offset: 0, .. })));

        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(load_model(&bad), Err(Error::Format { offset: 4, .. })));

        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(load_model(truncated), Err(Error::Format { .. })));

        // second layer header claims in_dim 4 instead of 3
        let second = 8 + 5 + 4 * 9;
        let mut bad = bytes.clone();
        bad[second] = 4;
        assert!(matches!(load_model(&bad), Err(Error::Format { offset, .. }) if offset == second));

        let mut bad = bytes;
        bad[12] = 7;
        assert!(matches!(load_model(&bad), Err(Error::Format { offset: 12, .. })));
    }

    fn preproc() -> Preproc {
        let n = (0.3f32 * 0.3 + 0.2 * 0.2 + 0.1 * 0.1).sqrt();
        Preproc::new([0.1, -0.05, 0.02], [0.3 / n, 0.2 / n, 0.1 / n], -0.4, 0.4).unwrap()
    }

    #[test]
    fn centered_window_maps_to_scaled_zero() {
        let p = preproc();
        let w = StreamWindow::new([p.pca_mean(); WINDOW_LEN], None, 0).unwrap();
        let out = p.preprocess(&w);
        assert_eq!(out.len(), WINDOW_LEN);
        assert!(out.iter().all(|&v| (v - 0.5).abs() < 1e-6));
    }

    #[test]
    fn preprocess_clamps() {
        let p = preproc();
        let mut s = [[0.0f32; 3]; WINDOW_LEN];
        for (i, row) in s.iter_mut().enumerate() {
            *row = [i as f32 - 20.0, 50.0 - i as f32, 3.0];
        }
        let out = p.preprocess(&StreamWindow::new(s, None, 0).unwrap());
        assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn preproc_validation_and_roundtrip() {
        assert!(Preproc::new([0.0; 3], [1.0, 1.0, 0.0], 0.0, 1.0).is_err());
        assert!(Preproc::new([0.0; 3], [1.0, 0.0, 0.0], 1.0, 1.0).is_err());
        let p = preproc();
        let bytes = p.to_bytes();
        assert_eq!(bytes.len(), 37);
        assert_eq!(Preproc::from_bytes(&bytes).unwrap(), p);
        let mut bad = bytes.clone();
        bad[1] = b'Z';
        assert!(matches!(Preproc::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
        assert!(Preproc::from_bytes(&bytes[..30]).is_err());
    }
}

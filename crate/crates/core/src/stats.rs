use crate::codec::Reader;
use crate::error::{check_len, Error, Result};

/// Guard added to the variance before taking the square root.
pub const STANDARDIZE_EPS: f64 = 1e-8;

const STATS_MAGIC: &[u8; 4] = b"TOLS";

/// Per-feature running mean and population variance (Welford).
///
/// State is `n` plus two f64 accumulators per feature, independent of how
/// many samples have been seen.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    n: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningStats {
    pub fn new(features: usize) -> Self {
        RunningStats {
            n: 0,
            mean: vec![0.0; features],
            m2: vec![0.0; features],
        }
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn features(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Population variance `m2 / n`; zero before the first sample.
    pub fn variance(&self) -> Vec<f64> {
        if self.n == 0 {
            return vec![0.0; self.mean.len()];
        }
        let n = self.n as f64;
        self.m2.iter().map(|m2| m2 / n).collect()
    }

    pub fn update<T: Copy + Into<f64>>(&mut self, x: &[T]) -> Result<()> {
        check_len("running stats update", self.mean.len(), x.len())?;
        self.n += 1;
        let n = self.n as f64;
        for ((mean, m2), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let v: f64 = v.into();
            let delta = v - *mean;
            *mean += delta / n;
            *m2 += delta * (v - *mean);
        }
        Ok(())
    }

    /// `(x − mean) / sqrt(var + ε)`; with fewer than two samples the variance is taken as 1.
    pub fn standardize(&self, x: &[f32]) -> Result<Vec<f32>> {
        check_len("standardize", self.mean.len(), x.len())?;
        let n = self.n as f64;
        Ok(x
            .iter()
            .zip(self.mean.iter().zip(&self.m2))
            .map(|(&v, (&mean, &m2))| {
                let centered = f64::from(v) - mean;
                let scaled = if self.n < 2 {
                    centered
                } else {
                    centered / (m2 / n + STANDARDIZE_EPS).sqrt()
                };
                scaled as f32
            })
            .collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(14 + 16 * self.mean.len());
        out.extend_from_slice(STATS_MAGIC);
        out.extend_from_slice(&self.n.to_le_bytes());
        out.extend_from_slice(&(self.mean.len() as u16).to_le_bytes());
        for v in self.mean.iter().chain(&self.m2) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(STATS_MAGIC)?;
        let n = r.u64()?;
        let d = r.u16()? as usize;
        let mean = (0..d).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let m2_at = r.offset();
        let m2 = (0..d).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        if m2.iter().any(|&v| v < 0.0) {
            return Err(Error::Format {
                offset: m2_at,
                message: "negative sum of squares".into(),
            });
        }
        r.finish()?;
        Ok(RunningStats { n, mean, m2 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Rng;
    use proptest::prelude::*;

    fn two_pass(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        (mean, var)
    }

    #[test]
    fn single_update() {
        let mut s = RunningStats::new(3);
        s.update(&[1.5f32, -2.0, 7.0]).unwrap();
        assert_eq!(s.mean(), &[1.5, -2.0, 7.0]);
        assert_eq!(s.variance(), vec![0.0; 3]);
    }

    #[test]
    fn small_stream() {
        let mut s = RunningStats::new(1);
        for v in [2.0f64, 4.0, 6.0] {
            s.update(&[v]).unwrap();
        }
        let (m, v) = two_pass(&[2.0, 4.0, 6.0]);
        assert_eq!(s.mean()[0], m);
        assert!((s.variance()[0] - v).abs() < 1e-12);
        assert!((s.variance()[0] - 8.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch() {
        let mut s = RunningStats::new(2);
        assert!(matches!(s.update(&[1.0f32]), Err(Error::Shape { .. })));
        assert!(s.standardize(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn empty_state_is_identity() {
        let s = RunningStats::new(2);
        assert_eq!(s.standardize(&[3.5, -1.0]).unwrap(), vec![3.5, -1.0]);
    }

    #[test]
    fn constant_stream_standardizes_to_zero() {
        let mut s = RunningStats::new(2);
        for _ in 0..50 {
            s.update(&[4.2f32, -0.7]).unwrap();
        }
        let z = s.standardize(&[4.2, -0.7]).unwrap();
        assert!(z.iter().all(|v| v.abs() < 1e-3), "{z:?}");
    }

    #[test]
    fn standardized_normal_stream() {
        let mut rng = Rng::new(11);
        let mut s = RunningStats::new(1);
        let mut out = Vec::new();
        for _ in 0..10_000 {
            let x = rng.normal(5.0, 2.0) as f32;
            s.update(&[x]).unwrap();
            out.push(f64::from(s.standardize(&[x]).unwrap()[0]));
        }
        let (m, v) = two_pass(&out);
        assert!(m.abs() < 0.05, "mean {m}");
        assert!((v.sqrt() - 1.0).abs() < 0.05, "std {}", v.sqrt());
    }

    #[test]
    fn state_bytes_roundtrip() {
        let mut s = RunningStats::new(5);
        s.update(&[1.0f32, 2.0, 3.0, 4.0, 5.0]).unwrap();
        s.update(&[0.0f32, 2.5, -3.0, 4.0, 9.0]).unwrap();
        let bytes = s.to_bytes();
        assert_eq!(RunningStats::from_bytes(&bytes).unwrap(), s);
        for _ in 0..100 {
            s.update(&[1.0f32; 5]).unwrap();
        }
        assert_eq!(s.to_bytes().len(), bytes.len());
    }

    proptest! {
        #[test]
        fn matches_two_pass(xs in prop::collection::vec(-1000.0f64..1000.0, 1..400)) {
            let mut s = RunningStats::new(1);
            for &x in &xs {
                s.update(&[x]).unwrap();
            }
            let (m, v) = two_pass(&xs);
            prop_assert!((s.mean()[0] - m).abs() < 1e-9);
            prop_assert!((s.variance()[0] - v).abs() < 1e-9);
            prop_assert!(s.variance()[0] >= 0.0);
        }

        #[test]
        fn permutation_insensitive(mut xs in prop::collection::vec(-1000.0f64..1000.0, 2..200), seed in any::<u64>()) {
            let mut a = RunningStats::new(1);
            xs.iter().for_each(|&x| a.update(&[x]).unwrap());
            Rng::new(seed).shuffle(&mut xs);
            let mut b = RunningStats::new(1);
            xs.iter().for_each(|&x| b.update(&[x]).unwrap());
            let rel = |p: f64, q: f64| (p - q).abs() / p.abs().max(q.abs()).max(1e-12);
            prop_assert!(rel(a.mean()[0], b.mean()[0]) < 1e-6 || (a.mean()[0] - b.mean()[0]).abs() < 1e-9);
            prop_assert!(rel(a.variance()[0], b.variance()[0]) < 1e-6);
        }
    }
}

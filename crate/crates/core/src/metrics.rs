//! Streaming evaluation counters: a growable confusion matrix for F1 / macro-F1
//! and a fixed-bin histogram of reconstruction errors.

use crate::error::{Error, Result};

/// Square count matrix, rows are truth and columns are predictions.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        ConfusionMatrix::default()
    }

    pub fn with_classes(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_counts(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Domain("confusion matrix must be square".into()));
        }
        Ok(ConfusionMatrix {
            k,
            counts: rows.concat(),
        })
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn count(&self, truth: usize, predicted: usize) -> u64 {
        if truth < self.k && predicted < self.k {
            self.counts[truth * self.k + predicted]
        } else {
            0
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn grow(&mut self, k: usize) {
        if k <= self.k {
            return;
        }
        let mut counts = vec![0; k * k];
        for r in 0..self.k {
            counts[r * k..r * k + self.k].copy_from_slice(&self.counts[r * self.k..(r + 1) * self.k]);
        }
        self.k = k;
        self.counts = counts;
    }

    pub fn record(&mut self, predicted: usize, truth: usize) {
        self.grow(predicted.max(truth) + 1);
        self.counts[truth * self.k + predicted] += 1;
    }

    pub fn clear(&mut self) {
        self.counts.iter_mut().for_each(|c| *c = 0);
    }

    /// Per-class F1 with the 0/0 → 0 convention for precision, recall and F1.
    pub fn f1_per_class(&self) -> Result<Vec<f64>> {
        if self.total() == 0 {
            return Err(Error::UndefinedMetric("F1 of an empty confusion matrix"));
        }
        Ok((0..self.k)
            .map(|c| {
                let tp = self.count(c, c) as f64;
                let predicted: u64 = (0..self.k).map(|r| self.count(r, c)).sum();
                let actual: u64 = (0..self.k).map(|p| self.count(c, p)).sum();
                let precision = ratio(tp, predicted as f64);
                let recall = ratio(tp, actual as f64);
                ratio(2.0 * precision * recall, precision + recall)
            })
            .collect())
    }

    /// Unweighted mean of per-class F1.
    pub fn macro_f1(&self) -> Result<f64> {
        let f1 = self.f1_per_class()?;
        Ok(f1.iter().sum::<f64>() / f1.len() as f64)
    }

    pub fn accuracy(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::UndefinedMetric("accuracy of an empty confusion matrix"));
        }
        let correct: u64 = (0..self.k).map(|c| self.count(c, c)).sum();
        Ok(correct as f64 / total as f64)
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub const DEFAULT_BINS: usize = 50;

/// Fixed uniform histogram over `[0, max]` plus an overflow bin, with running
/// min / max / mean.
#[derive(Debug, Clone, PartialEq)]
pub struct MseAccumulator {
    max: f64,
    counts: Vec<u64>,
    overflow: u64,
    n: u64,
    sum: f64,
    min_seen: f64,
    max_seen: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MseSummary {
    /// Regular bins followed by one overflow bin with `hi = +inf`.
    pub bins: Vec<HistogramBin>,
    pub count: u64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl MseSummary {
    /// `bin_lo,bin_hi,count` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count\n");
        for b in &self.bins {
            out.push_str(&format!("{},{},{}\n", b.lo, b.hi, b.count));
        }
        out
    }
}

impl MseAccumulator {
    pub fn new(bins: usize, max: f64) -> Result<Self> {
        if bins == 0 || !(max > 0.0) || !max.is_finite() {
            return Err(Error::Domain(format!(
                "histogram needs at least one bin and a positive finite range, got {bins} bins over [0, {max}]"
            )));
        }
        Ok(MseAccumulator {
            max,
            counts: vec![0; bins],
            overflow: 0,
            n: 0,
            sum: 0.0,
            min_seen: f64::INFINITY,
            max_seen: f64::NEG_INFINITY,
        })
    }

    /// 50 bins over `[0, 5 × reference_mean]`.
    pub fn for_reference_mean(reference_mean: f64) -> Result<Self> {
        MseAccumulator::new(DEFAULT_BINS, 5.0 * reference_mean)
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }

    pub fn record(&mut self, mse: f64) -> Result<()> {
        if !(mse >= 0.0) || !mse.is_finite() {
            return Err(Error::Domain(format!("MSE {mse} must be finite and non-negative")));
        }
        let width = self.max / self.counts.len() as f64;
        let bin = (mse / width) as usize;
        if mse > self.max {
            self.overflow += 1;
        } else {
            let last = self.counts.len() - 1;
            self.counts[bin.min(last)] += 1;
        }
        self.n += 1;
        self.sum += mse;
        self.min_seen = self.min_seen.min(mse);
        self.max_seen = self.max_seen.max(mse);
        Ok(())
    }

    pub fn summary(&self) -> MseSummary {
        let width = self.max / self.counts.len() as f64;
        let mut bins: Vec<HistogramBin> = self
            .counts
            .iter()
            .enumerate()
            .map(|(i, &count)| HistogramBin {
                lo: i as f64 * width,
                hi: if i + 1 == self.counts.len() {
                    self.max
                } else {
                    (i + 1) as f64 * width
                },
                count,
            })
            .collect();
        bins.push(HistogramBin {
            lo: self.max,
            hi: f64::INFINITY,
            count: self.overflow,
        });
        MseSummary {
            bins,
            count: self.n,
            mean: self.mean().unwrap_or(f64::NAN),
            min: if self.n > 0 { self.min_seen } else { f64::NAN },
            max: if self.n > 0 { self.max_seen } else { f64::NAN },
        }
    }
}

//! Per-window streaming loop: preprocess, run the frozen model, predict with
//! the online head, record metrics, then update the head.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::fan_sim::StreamWindow;
use crate::head::{Head, RegressionHead, SoftmaxHead};
use crate::metrics::{ConfusionMatrix, MseAccumulator};
use crate::model::{reconstruction_error, FrozenModel, Preproc};
use crate::stats::RunningStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PipelineMode {
    FineTune,
    Classify,
}

impl PipelineMode {
    pub fn name(self) -> &'static str {
        match self {
            PipelineMode::FineTune => "finetune",
            PipelineMode::Classify => "classify",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PipelineMetrics {
    Mse(MseAccumulator),
    Confusion(ConfusionMatrix),
}

/// A feature vector with an optional class label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeatures {
    pub features: Vec<f32>,
    pub label: Option<usize>,
}

pub const STEP_CSV_HEADER: &str = "step,mode,mse,loss,predicted_class,true_class,k";

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub mode: PipelineMode,
    /// Reconstruction error of the window (before any update).
    pub mse: f64,
    /// Loss of the pre-update prediction, when an update ran.
    pub loss: Option<f64>,
    pub predicted_class: Option<usize>,
    pub true_class: Option<usize>,
    pub classes: Option<usize>,
}

impl StepReport {
    pub fn to_csv_row(&self) -> String {
        fn opt<T: ToString>(v: Option<T>) -> String {
            v.map(|v| v.to_string()).unwrap_or_default()
        }
        format!(
            "{},{},{},{},{},{},{}",
            self.step,
            self.mode.name(),
            self.mse,
            opt(self.loss),
            opt(self.predicted_class),
            opt(self.true_class),
            opt(self.classes)
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    model: FrozenModel,
    preproc: Preproc,
    stats: RunningStats,
    head: Head,
    metrics: PipelineMetrics,
    learning: bool,
    step: u64,
}

impl Pipeline {
    /// Reconstruction fine-tuning: `head` replaces the model's final layer.
    pub fn fine_tune(model: FrozenModel, preproc: Preproc, head: RegressionHead, histogram: MseAccumulator) -> Result<Self> {
        let last = model.final_layer();
        if head.in_dim() != last.in_dim() || head.out_dim() != last.out_dim() {
            return Err(Error::Shape {
                context: "fine-tune head",
                expected: last.in_dim() * last.out_dim(),
                actual: head.in_dim() * head.out_dim(),
            });
        }
        Ok(Pipeline {
            model,
            preproc,
            stats: RunningStats::new(0),
            head: Head::Regression(head),
            metrics: PipelineMetrics::Mse(histogram),
            learning: true,
            step: 0,
        })
    }

    /// Classification on embedding plus reconstruction error, starting with one class.
    pub fn classify(model: FrozenModel, preproc: Preproc, alpha: f32) -> Result<Self> {
        let head = SoftmaxHead::new(classify_feature_dim(&model), alpha)?;
        Pipeline::classify_with_head(model, preproc, head)
    }

    pub fn classify_with_head(model: FrozenModel, preproc: Preproc, head: SoftmaxHead) -> Result<Self> {
        let features = classify_feature_dim(&model);
        if head.features() != features {
            return Err(Error::Shape {
                context: "classification head features",
                expected: features,
                actual: head.features(),
            });
        }
        Ok(Pipeline {
            stats: RunningStats::new(features),
            head: Head::Softmax(head),
            metrics: PipelineMetrics::Confusion(ConfusionMatrix::new()),
            model,
            preproc,
            learning: true,
            step: 0,
        })
    }

    pub fn mode(&self) -> PipelineMode {
        match self.head {
            Head::Regression(_) => PipelineMode::FineTune,
            Head::Softmax(_) => PipelineMode::Classify,
        }
    }

    pub fn model(&self) -> &FrozenModel {
        &self.model
    }

    pub fn preproc(&self) -> &Preproc {
        &self.preproc
    }

    pub fn stats(&self) -> &RunningStats {
        &self.stats
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub fn metrics(&self) -> &PipelineMetrics {
        &self.metrics
    }

    pub fn metrics_mut(&mut self) -> &mut PipelineMetrics {
        &mut self.metrics
    }

    pub fn learning_enabled(&self) -> bool {
        self.learning
    }

    pub fn set_learning(&mut self, enabled: bool) {
        self.learning = enabled;
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Unstandardized classification features: embedding followed by reconstruction error.
    pub fn features(&self, window: &StreamWindow) -> Result<(Vec<f32>, f64)> {
        classify_features(&self.model, &self.preproc, window)
    }

    /// Predicts classes for raw features using the current statistics and head, without learning.
    pub fn evaluate(&self, test: &[LabeledFeatures]) -> Result<ConfusionMatrix> {
        let Head::Softmax(head) = &self.head else {
            return Err(Error::Unsupported("evaluation needs a classification pipeline".into()));
        };
        let mut cm = ConfusionMatrix::with_classes(head.classes());
        for item in test {
            let Some(label) = item.label else { continue };
            let f = self.stats.standardize(&item.features)?;
            cm.record(head.predict_class(&f)?, label);
        }
        Ok(cm)
    }

    pub fn process_sample(&mut self, window: &StreamWindow) -> Result<StepReport> {
        let report = match self.mode() {
            PipelineMode::FineTune => self.fine_tune_step(window)?,
            PipelineMode::Classify => self.classify_step(window)?,
        };
        self.step += 1;
        Ok(report)
    }

    fn fine_tune_step(&mut self, window: &StreamWindow) -> Result<StepReport> {
        let Head::Regression(head) = &mut self.head else { unreachable!("mode checked") };
        let x = self.preproc.preprocess(window);
        let a = self.model.forward_truncated(&x)?;
        let prediction = head.predict(&a)?;
        let mse = reconstruction_error(&x, &prediction)?;
        if let PipelineMetrics::Mse(acc) = &mut self.metrics {
            acc.record(mse)?;
        }
        let loss = if self.learning { Some(head.update(&a, &x)?) } else { None };
        Ok(StepReport {
            step: self.step,
            mode: PipelineMode::FineTune,
            mse,
            loss,
            predicted_class: None,
            true_class: None,
            classes: None,
        })
    }

    fn classify_step(&mut self, window: &StreamWindow) -> Result<StepReport> {
        let Head::Softmax(head) = &mut self.head else { unreachable!("mode checked") };
        if let Some(label) = window.label {
            if label > head.classes() {
                return Err(Error::LabelGap {
                    label,
                    classes: head.classes(),
                });
            }
        }
        let (raw, mse) = classify_features(&self.model, &self.preproc, window)?;
        self.stats.update(&raw)?;
        let f = self.stats.standardize(&raw)?;
        let label = window.label.filter(|_| self.learning);
        if label == Some(head.classes()) {
            head.add_class()?;
        }
        let predicted = head.predict_class(&f)?;
        let mut loss = None;
        if let Some(y) = label {
            if let PipelineMetrics::Confusion(cm) = &mut self.metrics {
                cm.record(predicted, y);
            }
            loss = Some(head.update(&f, y)?);
        }
        Ok(StepReport {
            step: self.step,
            mode: PipelineMode::Classify,
            mse,
            loss,
            predicted_class: Some(predicted),
            true_class: window.label,
            classes: Some(head.classes()),
        })
    }

    /// Serialized learner state (head, running statistics, step counter); metrics are excluded.
    pub fn state_bytes(&self) -> Vec<u8> {
        let mut out = self.head.to_bytes();
        out.extend_from_slice(&self.stats.to_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out
    }
}

fn classify_feature_dim(model: &FrozenModel) -> usize {
    model.embedding_dim() + 1
}

/// Embedding of the preprocessed window with its reconstruction error appended.
pub fn classify_features(model: &FrozenModel, preproc: &Preproc, window: &StreamWindow) -> Result<(Vec<f32>, f64)> {
    let x = preproc.preprocess(window);
    let z = model.encode(&x)?;
    let reconstruction = model.forward_range(model.embedding_index() + 1..model.layers().len(), &z)?;
    let mse = reconstruction_error(&x, &reconstruction)?;
    let mut features = z;
    features.push(mse as f32);
    Ok((features, mse))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchMode {
    Inference,
    Online,
}

/// Per-iteration wall-clock times in microseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingSummary {
    pub iterations: usize,
    pub average: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

pub const MIN_BENCH_ITERATIONS: usize = 100;

/// Times `process_sample` for every window; learning is forced on or off for the run.
pub fn bench_iteration<I>(pipeline: &mut Pipeline, windows: I, mode: BenchMode) -> Result<TimingSummary>
where
    I: IntoIterator<Item = StreamWindow>,
{
    let previous = pipeline.learning_enabled();
    pipeline.set_learning(mode == BenchMode::Online);
    let mut times = Vec::new();
    let mut outcome = Ok(());
    for window in windows {
        let start = Instant::now();
        let r = pipeline.process_sample(&window);
        let elapsed = start.elapsed();
        if let Err(e) = r {
            outcome = Err(e);
            break;
        }
        times.push(elapsed.as_secs_f64() * 1e6);
    }
    pipeline.set_learning(previous);
    outcome?;
    summarize_times(times)
}

pub fn summarize_times(mut times: Vec<f64>) -> Result<TimingSummary> {
    if times.len() < MIN_BENCH_ITERATIONS {
        return Err(Error::Domain(format!(
            "benchmark needs at least {MIN_BENCH_ITERATIONS} iterations, got {}",
            times.len()
        )));
    }
    times.sort_by(f64::total_cmp);
    let n = times.len();
    let median = if n % 2 == 0 {
        (times[n / 2 - 1] + times[n / 2]) / 2.0
    } else {
        times[n / 2]
    };
    Ok(TimingSummary {
        iterations: n,
        average: times.iter().sum::<f64>() / n as f64,
        median,
        min: times[0],
        max: times[n - 1],
    })
}

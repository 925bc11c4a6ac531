//! The experiment commands. Each reads and writes files under `cfg.out` and
//! returns a summary that is also stored in the manifest.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use streamtune::head::{grad_check, regression_rule_error, GradCheck, RegressionLoss, DEFAULT_ALPHA};
use streamtune::metrics::{ConfusionMatrix, MseAccumulator, MseSummary};
use streamtune::pipeline::{classify_features, LabeledFeatures, PipelineMetrics, STEP_CSV_HEADER};
use streamtune::trainer::backprop_grad_check;
use streamtune::{
    bench_iteration, fit_preproc, load_model, reconstruction_error, save_model, train_autoencoder,
    train_softmax_offline, BenchMode, Dataset, DriftConfig, FanMode, FanStream, FrozenModel, GradRule,
    Pipeline, Preproc, RegressionHead, Rng, RunningStats, SignalParams, SoftmaxHead, StreamWindow,
    TimingSummary, TrainConfig,
};

use crate::corpus::{write_corpus, CorpusReader};
use crate::{manifest, CliError};

pub const TRAIN_NORMAL: &str = "train_normal.csv";
pub const TEST_FILES: [&str; 3] = ["test_normal.csv", "test_stuck.csv", "test_tilted.csv"];
pub const MODEL_FILE: &str = "model.tolm";
pub const PREPROC_FILE: &str = "preproc.tolp";
pub const LOSS_CURVE: &str = "loss_curve.csv";
pub const TRAIN_MSE: &str = "train_mse.csv";
pub const HIST_BEFORE: &str = "mse_hist_drift_before.csv";
pub const HIST_AFTER: &str = "mse_hist_drift_after.csv";
pub const FINETUNE_STEPS: &str = "finetune_steps.csv";
pub const TIMING: &str = "timing.csv";
pub const F1_CURVE: &str = "f1_curve.csv";
pub const CLASSIFY_STEPS: &str = "classify_steps.csv";
pub const BASELINE: &str = "baseline_f1.csv";
pub const GRADCHECK: &str = "gradcheck.csv";

/// Every random stream is `Rng::with_stream(seed, id)` with one of these ids.
const STREAM_TRAIN: u64 = 0;
const STREAM_TEST: u64 = 1;
const STREAM_DRIFT: u64 = 10;
const STREAM_BENCH: u64 = 11;
const STREAM_CLASSIFY: u64 = 20;
const STREAM_GRADCHECK: u64 = 30;

pub const GRADCHECK_TOLERANCE: f64 = 1e-3;
pub const GRADCHECK_INSTANCES: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// Windows per generated corpus file.
    pub windows: usize,
    /// Learning rate for whichever model the command trains; `None` picks the command default.
    pub alpha: Option<f32>,
    /// `None` uses bce for fine-tuning and the default pairings for gradient checks.
    pub grad_rule: Option<GradRule>,
    /// Online fine-tune iterations.
    pub iterations: usize,
    /// Windows timed per mode by the benchmark.
    pub bench_windows: usize,
    pub eval_every: usize,
    pub drift: DriftConfig,
    pub epochs: usize,
    /// Labeled windows per class block in the classification stream.
    pub block: usize,
    pub passes: usize,
    pub sweep: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out: PathBuf::from("out"),
            windows: 3000,
            alpha: None,
            grad_rule: None,
            iterations: 2000,
            bench_windows: 3000,
            eval_every: 50,
            drift: DriftConfig::default(),
            epochs: TrainConfig::default().epochs,
            block: 600,
            passes: 2,
            sweep: vec![1, 5, 10, 50, 100, 200],
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let counts = [
            ("windows", self.windows),
            ("iterations", self.iterations),
            ("eval-every", self.eval_every),
            ("block", self.block),
            ("passes", self.passes),
            ("bench-windows", self.bench_windows),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(CliError::Usage(format!("--{name} must be positive")));
        }
        if let Some(a) = self.alpha {
            if !(a.is_finite() && a > 0.0) {
                return Err(CliError::Usage(format!("--alpha must be positive, got {a}")));
            }
        }
        if self.sweep.is_empty() {
            return Err(CliError::Usage("--sweep needs at least one epoch count".into()));
        }
        Ok(())
    }

    fn to_json(&self) -> Value {
        json!({
            "seed": self.seed,
            "windows": self.windows,
            "alpha": self.alpha,
            "grad_rule": self.grad_rule.map(|r| r.name()),
            "iterations": self.iterations,
            "bench_windows": self.bench_windows,
            "eval_every": self.eval_every,
            "drift": self.drift.to_string(),
            "epochs": self.epochs,
            "block": self.block,
            "passes": self.passes,
            "sweep": self.sweep,
        })
    }

    fn rng(&self, stream: u64) -> Rng {
        Rng::with_stream(self.seed, stream)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn ensure_out(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.out).map_err(|e| CliError::io(&self.out, e))
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn json_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("summary serializes")
}

fn fan_stream(mode: FanMode, rng: Rng, drift: Option<DriftConfig>) -> FanStream {
    FanStream::new(SignalParams::default(), mode, rng, drift)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenDataSummary {
    pub files: Vec<(String, usize)>,
}

pub fn gen_data(cfg: &ExperimentConfig) -> Result<GenDataSummary, CliError> {
    cfg.validate()?;
    cfg.ensure_out()?;
    let mut files = Vec::new();
    let n = write_corpus(
        &cfg.path(TRAIN_NORMAL),
        fan_stream(FanMode::Normal, cfg.rng(STREAM_TRAIN), None).take(cfg.windows),
    )?;
    files.push((TRAIN_NORMAL.to_string(), n));
    for (mode, name) in FanMode::ALL.into_iter().zip(TEST_FILES) {
        let rng = cfg.rng(STREAM_TEST + mode.index() as u64);
        let n = write_corpus(&cfg.path(name), fan_stream(mode, rng, None).take(cfg.windows))?;
        files.push((name.to_string(), n));
    }
    let summary = GenDataSummary { files };
    let names: Vec<&str> = std::iter::once(TRAIN_NORMAL).chain(TEST_FILES).collect();
    manifest::record(&cfg.out, "gen-data", cfg.to_json(), json_value(&summary), &names)?;
    Ok(summary)
}

/// Loads the trained model and preprocessing block; missing files are a usage error.
pub fn load_artifacts(out: &Path) -> Result<(FrozenModel, Preproc), CliError> {
    let read = |name: &str| {
        let path = out.join(name);
        fs::read(&path).map_err(|_| {
            CliError::Usage(format!("{} not found; run `streamtune train` first", path.display()))
        })
    };
    let model = load_model(&read(MODEL_FILE)?)?;
    let preproc = Preproc::from_bytes(&read(PREPROC_FILE)?)?;
    Ok((model, preproc))
}

fn open_corpus(cfg: &ExperimentConfig, name: &str) -> Result<CorpusReader, CliError> {
    let path = cfg.path(name);
    if !path.exists() {
        return Err(CliError::Usage(format!(
            "{} not found; run `streamtune gen-data` first",
            path.display()
        )));
    }
    CorpusReader::open(&path)
}

fn window_mse(model: &FrozenModel, preproc: &Preproc, w: &StreamWindow) -> Result<f64, CliError> {
    let x = preproc.preprocess(w);
    Ok(reconstruction_error(&x, &model.forward(&x)?)?)
}

/// Mean frozen-model reconstruction error over a corpus file, read window by window.
pub fn corpus_mean_mse(cfg: &ExperimentConfig, name: &str, model: &FrozenModel, preproc: &Preproc) -> Result<f64, CliError> {
    let mut total = 0.0;
    let mut n = 0usize;
    for w in open_corpus(cfg, name)? {
        total += window_mse(model, preproc, &w?)?;
        n += 1;
    }
    if n == 0 {
        return Err(CliError::Data(format!("{name} holds no windows")));
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub train_normal_mse: f64,
    pub test_normal_mse: f64,
    pub test_stuck_mse: f64,
    pub test_tilted_mse: f64,
}

impl TrainSummary {
    /// Smaller of the stuck/normal and tilted/normal mean-MSE ratios.
    pub fn separation_ratio(&self) -> f64 {
        self.test_stuck_mse.min(self.test_tilted_mse) / self.test_normal_mse
    }
}

pub fn train(cfg: &ExperimentConfig) -> Result<TrainSummary, CliError> {
    cfg.validate()?;
    let windows: Vec<StreamWindow> = open_corpus(cfg, TRAIN_NORMAL)?.collect::<Result<_, _>>()?;
    let preproc = fit_preproc(&windows)?;
    let inputs: Vec<Vec<f32>> = windows.iter().map(|w| preproc.preprocess(w)).collect();
    drop(windows);
    let train_cfg = TrainConfig {
        epochs: cfg.epochs,
        alpha: cfg.alpha.unwrap_or(TrainConfig::default().alpha),
        seed: cfg.seed,
        ..TrainConfig::default()
    };
    let trained = train_autoencoder(&Dataset::unlabeled(inputs)?, &train_cfg)?;
    let model = trained.model.clone();

    fs::write(cfg.path(MODEL_FILE), save_model(&model)).map_err(|e| CliError::io(&cfg.path(MODEL_FILE), e))?;
    fs::write(cfg.path(PREPROC_FILE), preproc.to_bytes()).map_err(|e| CliError::io(&cfg.path(PREPROC_FILE), e))?;
    write_text(&cfg.path(LOSS_CURVE), &trained.loss_curve_csv())?;

    let summary = TrainSummary {
        epochs: cfg.epochs,
        initial_loss: trained.initial_loss,
        final_loss: trained.loss_curve.last().copied().unwrap_or(trained.initial_loss),
        train_normal_mse: corpus_mean_mse(cfg, TRAIN_NORMAL, &model, &preproc)?,
        test_normal_mse: corpus_mean_mse(cfg, TEST_FILES[0], &model, &preproc)?,
        test_stuck_mse: corpus_mean_mse(cfg, TEST_FILES[1], &model, &preproc)?,
        test_tilted_mse: corpus_mean_mse(cfg, TEST_FILES[2], &model, &preproc)?,
    };
    write_text(
        &cfg.path(TRAIN_MSE),
        &format!(
            "corpus,mean_mse\ntrain_normal,{}\ntest_normal,{}\ntest_stuck,{}\ntest_tilted,{}\n",
            summary.train_normal_mse, summary.test_normal_mse, summary.test_stuck_mse, summary.test_tilted_mse
        ),
    )?;
    manifest::record(
        &cfg.out,
        "train",
        cfg.to_json(),
        json_value(&summary),
        &[MODEL_FILE, PREPROC_FILE, LOSS_CURVE, TRAIN_MSE],
    )?;
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Timing {
    pub iterations: usize,
    pub average_us: f64,
    pub median_us: f64,
    pub min_us: f64,
    pub max_us: f64,
}

impl From<TimingSummary> for Timing {
    fn from(t: TimingSummary) -> Self {
        Timing {
            iterations: t.iterations,
            average_us: t.average,
            median_us: t.median,
            min_us: t.min,
            max_us: t.max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimingReport {
    pub inference: Timing,
    pub online: Timing,
}

impl TimingReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("mode,iterations,average_us,median_us,min_us,max_us\n");
        for (name, t) in [("inference", self.inference), ("online", self.online)] {
            out.push_str(&format!(
                "{name},{},{},{},{},{}\n",
                t.iterations, t.average_us, t.median_us, t.min_us, t.max_us
            ));
        }
        out
    }
}

fn fine_tune_pipeline(cfg: &ExperimentConfig, model: FrozenModel, preproc: Preproc, reference: f64) -> Result<Pipeline, CliError> {
    let alpha = cfg.alpha.unwrap_or(DEFAULT_ALPHA);
    let rule = cfg.grad_rule.unwrap_or_default();
    let head = RegressionHead::from_layer(model.final_layer(), alpha, rule)?;
    Ok(Pipeline::fine_tune(model, preproc, head, MseAccumulator::for_reference_mean(reference)?)?)
}

/// Times inference-only and online processing over the same drifted windows,
/// on copies of `pipeline` so the caller's state is untouched.
pub fn time_pipeline(cfg: &ExperimentConfig, pipeline: &Pipeline) -> Result<TimingReport, CliError> {
    let windows = || {
        fan_stream(FanMode::Normal, cfg.rng(STREAM_BENCH), Some(cfg.drift)).take(cfg.bench_windows)
    };
    let inference = bench_iteration(&mut pipeline.clone(), windows(), BenchMode::Inference)?;
    let online = bench_iteration(&mut pipeline.clone(), windows(), BenchMode::Online)?;
    Ok(TimingReport {
        inference: inference.into(),
        online: online.into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinetuneSummary {
    pub train_normal_mse: f64,
    pub before_mse: f64,
    pub after_mse: f64,
    pub first_iteration_mse: f64,
    pub last_iteration_mse: f64,
    pub iterations: usize,
    pub timing: TimingReport,
}

impl FinetuneSummary {
    pub fn before_ratio(&self) -> f64 {
        self.before_mse / self.train_normal_mse
    }

    pub fn after_ratio(&self) -> f64 {
        self.after_mse / self.train_normal_mse
    }
}

fn reset_histogram(p: &mut Pipeline, reference: f64) -> Result<(), CliError> {
    *p.metrics_mut() = PipelineMetrics::Mse(MseAccumulator::for_reference_mean(reference)?);
    Ok(())
}

fn histogram(p: &Pipeline) -> MseSummary {
    match p.metrics() {
        PipelineMetrics::Mse(acc) => acc.summary(),
        PipelineMetrics::Confusion(_) => unreachable!("fine-tune pipeline records MSE"),
    }
}

pub fn finetune(cfg: &ExperimentConfig) -> Result<FinetuneSummary, CliError> {
    cfg.validate()?;
    let (model, preproc) = load_artifacts(&cfg.out)?;
    let reference = corpus_mean_mse(cfg, TRAIN_NORMAL, &model, &preproc)?;
    let mut p = fine_tune_pipeline(cfg, model, preproc, reference)?;
    let mut drifted = fan_stream(FanMode::Normal, cfg.rng(STREAM_DRIFT), Some(cfg.drift));
    let eval_windows = cfg.windows;

    p.set_learning(false);
    for w in drifted.by_ref().take(eval_windows) {
        p.process_sample(&w)?;
    }
    let before = histogram(&p);
    let timing = time_pipeline(cfg, &p)?;

    p.set_learning(true);
    let steps_path = cfg.path(FINETUNE_STEPS);
    let mut steps = BufWriter::new(File::create(&steps_path).map_err(|e| CliError::io(&steps_path, e))?);
    writeln!(steps, "{STEP_CSV_HEADER}").map_err(|e| CliError::io(&steps_path, e))?;
    let mut first = None;
    let mut last = 0.0;
    for w in drifted.by_ref().take(cfg.iterations) {
        let r = p.process_sample(&w)?;
        first.get_or_insert(r.mse);
        last = r.mse;
        writeln!(steps, "{}", r.to_csv_row()).map_err(|e| CliError::io(&steps_path, e))?;
    }
    steps.flush().map_err(|e| CliError::io(&steps_path, e))?;

    p.set_learning(false);
    reset_histogram(&mut p, reference)?;
    for w in drifted.by_ref().take(eval_windows) {
        p.process_sample(&w)?;
    }
    let after = histogram(&p);

    write_text(&cfg.path(HIST_BEFORE), &before.to_csv())?;
    write_text(&cfg.path(HIST_AFTER), &after.to_csv())?;
    write_text(&cfg.path(TIMING), &timing.to_csv())?;
    let summary = FinetuneSummary {
        train_normal_mse: reference,
        before_mse: before.mean,
        after_mse: after.mean,
        first_iteration_mse: first.unwrap_or(f64::NAN),
        last_iteration_mse: last,
        iterations: cfg.iterations,
        timing,
    };
    manifest::record(
        &cfg.out,
        "finetune",
        cfg.to_json(),
        json_value(&summary),
        &[HIST_BEFORE, HIST_AFTER, FINETUNE_STEPS, TIMING],
    )?;
    Ok(summary)
}

pub fn bench(cfg: &ExperimentConfig) -> Result<TimingReport, CliError> {
    cfg.validate()?;
    let (model, preproc) = load_artifacts(&cfg.out)?;
    let reference = corpus_mean_mse(cfg, TRAIN_NORMAL, &model, &preproc)?;
    let p = fine_tune_pipeline(cfg, model, preproc, reference)?;
    let timing = time_pipeline(cfg, &p)?;
    write_text(&cfg.path(TIMING), &timing.to_csv())?;
    manifest::record(&cfg.out, "bench", cfg.to_json(), json_value(&timing), &[TIMING])?;
    Ok(timing)
}

/// Raw classification features of every test corpus window, labeled by mode.
pub fn test_features(cfg: &ExperimentConfig, model: &FrozenModel, preproc: &Preproc) -> Result<Vec<LabeledFeatures>, CliError> {
    let mut out = Vec::new();
    for name in TEST_FILES {
        for w in open_corpus(cfg, name)? {
            let w = w?;
            let (features, _) = classify_features(model, preproc, &w)?;
            out.push(LabeledFeatures {
                features,
                label: w.label,
            });
        }
    }
    Ok(out)
}

/// The labeled training stream: class blocks normal, stuck, tilted, repeated `passes` times.
pub fn labeled_stream(cfg: &ExperimentConfig) -> impl Iterator<Item = StreamWindow> {
    let mut streams: Vec<FanStream> = FanMode::ALL
        .iter()
        .map(|&m| fan_stream(m, cfg.rng(STREAM_CLASSIFY + m.index() as u64), None))
        .collect();
    let (block, passes) = (cfg.block, cfg.passes);
    (0..passes)
        .flat_map(move |_| FanMode::ALL.into_iter().flat_map(move |m| std::iter::repeat_n(m, block)))
        .map(move |m| {
            let w = streams[m.index()].next().expect("fan streams are endless");
            w.with_label(Some(m.index()))
        })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct F1Point {
    pub step: usize,
    /// `None` for classes the head has not seen yet.
    pub per_class: Vec<Option<f64>>,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassifySummary {
    pub steps: usize,
    pub classes: usize,
    pub curve: Vec<F1Point>,
}

impl ClassifySummary {
    pub fn final_macro_f1(&self) -> Option<f64> {
        self.curve.last().map(|p| p.macro_f1)
    }

    pub fn to_csv(&self) -> String {
        let k = self.curve.iter().map(|p| p.per_class.len()).max().unwrap_or(0);
        let mut out = String::from("step");
        (0..k).for_each(|c| out.push_str(&format!(",f1_class{c}")));
        out.push_str(",macro_f1\n");
        for p in &self.curve {
            out.push_str(&p.step.to_string());
            for c in 0..k {
                out.push(',');
                if let Some(Some(f)) = p.per_class.get(c) {
                    out.push_str(&f.to_string());
                }
            }
            out.push_str(&format!(",{}\n", p.macro_f1));
        }
        out
    }
}

fn f1_point(step: usize, cm: &ConfusionMatrix, seen: usize) -> Result<F1Point, CliError> {
    let f1 = cm.f1_per_class()?;
    Ok(F1Point {
        step,
        per_class: f1.iter().enumerate().map(|(c, &f)| (c < seen).then_some(f)).collect(),
        macro_f1: cm.macro_f1()?,
    })
}

pub fn classify(cfg: &ExperimentConfig) -> Result<ClassifySummary, CliError> {
    cfg.validate()?;
    let (model, preproc) = load_artifacts(&cfg.out)?;
    let test = test_features(cfg, &model, &preproc)?;
    let mut p = Pipeline::classify(model, preproc, cfg.alpha.unwrap_or(DEFAULT_ALPHA))?;

    let steps_path = cfg.path(CLASSIFY_STEPS);
    let mut steps = BufWriter::new(File::create(&steps_path).map_err(|e| CliError::io(&steps_path, e))?);
    writeln!(steps, "{STEP_CSV_HEADER}").map_err(|e| CliError::io(&steps_path, e))?;
    let mut curve = Vec::new();
    let mut count = 0;
    for w in labeled_stream(cfg) {
        let r = p.process_sample(&w)?;
        writeln!(steps, "{}", r.to_csv_row()).map_err(|e| CliError::io(&steps_path, e))?;
        count += 1;
        if count % cfg.eval_every == 0 {
            let seen = r.classes.unwrap_or(0);
            curve.push(f1_point(count, &p.evaluate(&test)?, seen)?);
        }
    }
    steps.flush().map_err(|e| CliError::io(&steps_path, e))?;
    let classes = match p.head() {
        streamtune::Head::Softmax(h) => h.classes(),
        streamtune::Head::Regression(_) => unreachable!("classification pipeline"),
    };
    let summary = ClassifySummary {
        steps: count,
        classes,
        curve,
    };
    write_text(&cfg.path(F1_CURVE), &summary.to_csv())?;
    let manifest_summary = json!({
        "steps": summary.steps,
        "classes": summary.classes,
        "final_macro_f1": summary.final_macro_f1(),
    });
    manifest::record(&cfg.out, "classify", cfg.to_json(), manifest_summary, &[F1_CURVE, CLASSIFY_STEPS])?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineSummary {
    pub training_windows: usize,
    /// `(epochs, macro_f1)` on the test corpora.
    pub sweep: Vec<(usize, f64)>,
}

impl BaselineSummary {
    pub fn macro_f1_at(&self, epochs: usize) -> Option<f64> {
        self.sweep.iter().find(|(e, _)| *e == epochs).map(|(_, f)| *f)
    }
}

fn standardized(stats: &RunningStats, items: &[LabeledFeatures]) -> Result<(Vec<Vec<f32>>, Vec<usize>), CliError> {
    let mut xs = Vec::with_capacity(items.len());
    let mut ys = Vec::with_capacity(items.len());
    for item in items {
        xs.push(stats.standardize(&item.features)?);
        ys.push(item.label.ok_or_else(|| CliError::Data("unlabeled window in a labeled corpus".into()))?);
    }
    Ok((xs, ys))
}

fn evaluate_head(head: &SoftmaxHead, xs: &[Vec<f32>], ys: &[usize]) -> Result<ConfusionMatrix, CliError> {
    let mut cm = ConfusionMatrix::with_classes(head.classes());
    for (x, &y) in xs.iter().zip(ys) {
        cm.record(head.predict_class(x)?, y);
    }
    Ok(cm)
}

pub fn baseline(cfg: &ExperimentConfig) -> Result<BaselineSummary, CliError> {
    cfg.validate()?;
    let (model, preproc) = load_artifacts(&cfg.out)?;
    let mut train_items = Vec::new();
    for w in labeled_stream(cfg) {
        let (features, _) = classify_features(&model, &preproc, &w)?;
        train_items.push(LabeledFeatures {
            features,
            label: w.label,
        });
    }
    let test = test_features(cfg, &model, &preproc)?;
    let mut stats = RunningStats::new(train_items[0].features.len());
    for item in &train_items {
        stats.update(&item.features)?;
    }
    let (train_x, train_y) = standardized(&stats, &train_items)?;
    let (test_x, test_y) = standardized(&stats, &test)?;
    let data = Dataset::new(train_x, Some(train_y))?;

    let mut sweep = Vec::new();
    for &epochs in &cfg.sweep {
        let train_cfg = TrainConfig {
            epochs,
            alpha: cfg.alpha.unwrap_or(TrainConfig::default().alpha),
            seed: cfg.seed,
            ..TrainConfig::default()
        };
        let trained = train_softmax_offline(&data, &train_cfg)?;
        let cm = evaluate_head(&trained.model, &test_x, &test_y)?;
        sweep.push((epochs, cm.macro_f1()?));
    }
    let summary = BaselineSummary {
        training_windows: data.len(),
        sweep,
    };
    let mut csv = String::from("epochs,macro_f1\n");
    for (e, f) in &summary.sweep {
        csv.push_str(&format!("{e},{f}\n"));
    }
    write_text(&cfg.path(BASELINE), &csv)?;
    manifest::record(&cfg.out, "baseline", cfg.to_json(), json_value(&summary), &[BASELINE])?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub max_relative_error: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_relative_error < GRADCHECK_TOLERANCE
    }
}

/// The loss each update rule is checked against. The literal rule has
/// no loss of its own; it is held to cross-entropy, the loss it stands in
/// for, and is expected to fail.
fn rule_loss(rule: GradRule) -> RegressionLoss {
    match rule {
        GradRule::Bce | GradRule::PaperLiteral => RegressionLoss::Bce,
        GradRule::MseSigmoid => RegressionLoss::HalfSquaredError,
    }
}

pub fn run_grad_checks(seed: u64, rule: Option<GradRule>) -> Result<Vec<CheckResult>, CliError> {
    let rules = match rule {
        Some(r) => vec![r],
        None => vec![GradRule::Bce, GradRule::MseSigmoid],
    };
    let mut results = Vec::new();
    for (i, rule) in rules.into_iter().enumerate() {
        let mut rng = Rng::with_stream(seed, STREAM_GRADCHECK + i as u64);
        results.push(CheckResult {
            name: format!("regression {}", rule.name()),
            max_relative_error: regression_rule_error(rule, rule_loss(rule), GRADCHECK_INSTANCES, &mut rng),
        });
    }
    let mut rng = Rng::with_stream(seed, STREAM_GRADCHECK + 8);
    results.push(CheckResult {
        name: "softmax".into(),
        max_relative_error: grad_check(GradCheck::Softmax, GRADCHECK_INSTANCES, &mut rng)?,
    });
    let mut rng = Rng::with_stream(seed, STREAM_GRADCHECK + 9);
    results.push(CheckResult {
        name: "backprop 4-3-2-3-4".into(),
        max_relative_error: backprop_grad_check(&[4, 3, 2, 3, 4], GRADCHECK_INSTANCES, &mut rng),
    });
    Ok(results)
}

/// Runs the gradient checks and writes their report; failures are reported by [`check_failures`].
pub fn gradcheck(cfg: &ExperimentConfig) -> Result<Vec<CheckResult>, CliError> {
    cfg.validate()?;
    cfg.ensure_out()?;
    let results = run_grad_checks(cfg.seed, cfg.grad_rule)?;
    let mut csv = String::from("check,max_relative_error,passed\n");
    for r in &results {
        csv.push_str(&format!("{},{},{}\n", r.name, r.max_relative_error, r.passed()));
    }
    write_text(&cfg.path(GRADCHECK), &csv)?;
    manifest::record(&cfg.out, "gradcheck", cfg.to_json(), json_value(&results), &[GRADCHECK])?;
    Ok(results)
}

/// A check error naming every failed check, if any failed.
pub fn check_failures(results: &[CheckResult]) -> Option<CliError> {
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.passed())
        .map(|r| format!("{} ({:.3e})", r.name, r.max_relative_error))
        .collect();
    (!failed.is_empty()).then(|| CliError::Check(format!("gradient mismatch in {}", failed.join(", "))))
}

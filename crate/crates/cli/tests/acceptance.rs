//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.
//!
//! Experiments run with the default configuration (seed 0) in a scratch
//! directory, exactly as `streamtune <command>` would run them.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use streamtune::fan_sim::SignalParams;
use streamtune::head::{load_head, DEFAULT_ALPHA};
use streamtune::model::Preproc;
use streamtune::{
    load_model, save_model, FanMode, FanStream, GradRule, Head, MseAccumulator, Pipeline, RegressionHead,
    RunningStats, Rng, SoftmaxHead, StreamWindow,
};
use streamtune_cli::commands::{
    self, ClassifySummary, ExperimentConfig, GRADCHECK_INSTANCES, MODEL_FILE, PREPROC_FILE, TIMING,
};

type Outcome = Result<String, String>;

struct Suite {
    failures: usize,
}

impl Suite {
    fn run(&mut self, id: usize, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let mut outcome = f();
        let took = start.elapsed();
        if let (Some(limit), Ok(detail)) = (limit, &outcome) {
            if took > limit {
                outcome = Err(format!("{detail}; took {took:.1?}, limit {limit:?}"));
            }
        }
        match outcome {
            Ok(detail) => println!("PASS {id:>2} {name}: {detail} [{took:.2?}]"),
            Err(detail) => {
                self.failures += 1;
                println!("FAIL {id:>2} {name}: {detail} [{took:.2?}]");
            }
        }
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn welford_against_two_pass() -> Outcome {
    let mut rng = Rng::new(2024);
    let mut worst: f64 = 0.0;
    let lengths = [1usize, 2, 3, 10, 1_000, 100_000, 1_000_000];
    for &n in &lengths {
        let mu = rng.uniform_range(-10.0, 10.0);
        let sigma = rng.uniform_range(0.1, 5.0);
        let xs: Vec<f64> = (0..n).map(|_| rng.normal(mu, sigma)).collect();
        let mut stats = RunningStats::new(1);
        for x in &xs {
            stats.update(&[*x]).map_err(err)?;
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        let dm = (stats.mean()[0] - mean).abs();
        let dv = (stats.variance()[0] - var).abs();
        ensure(stats.count() == n as u64, || format!("count {} for {n} values", stats.count()))?;
        ensure(dm <= 1e-9 && dv <= 1e-9, || format!("n={n}: |dmean| {dm:.2e}, |dvar| {dv:.2e}"))?;
        worst = worst.max(dm).max(dv);
    }
    Ok(format!("max abs deviation {worst:.2e} over streams of up to 10^6 values"))
}

fn gradient_checks() -> Outcome {
    let results = commands::run_grad_checks(0, None).map_err(err)?;
    let summary: Vec<String> = results
        .iter()
        .map(|r| format!("{} {:.2e}", r.name, r.max_relative_error))
        .collect();
    ensure(results.iter().all(|r| r.passed()), || summary.join(", "))?;
    Ok(format!("{} instances each; {}", GRADCHECK_INSTANCES, summary.join(", ")))
}

fn anomaly_separation(cfg: &ExperimentConfig) -> Outcome {
    commands::gen_data(cfg).map_err(err)?;
    let s = commands::train(cfg).map_err(err)?;
    let ratio = s.separation_ratio();
    let detail = format!(
        "normal {:.5}, stuck {:.5}, tilted {:.5}, weaker abnormal/normal {ratio:.2}x",
        s.test_normal_mse, s.test_stuck_mse, s.test_tilted_mse
    );
    ensure(ratio >= 2.0, || format!("{detail} < 2x"))?;

    let again = tempfile::tempdir().map_err(err)?;
    let cfg2 = ExperimentConfig {
        out: again.path().to_path_buf(),
        ..cfg.clone()
    };
    commands::gen_data(&cfg2).map_err(err)?;
    let s2 = commands::train(&cfg2).map_err(err)?;
    let same_model = std::fs::read(cfg.out.join(MODEL_FILE)).map_err(err)?
        == std::fs::read(cfg2.out.join(MODEL_FILE)).map_err(err)?;
    ensure(same_model && s2 == s, || format!("{detail}; rerun with the same seed differs"))?;
    Ok(format!("{detail}; rerun identical"))
}

fn drift_fine_tune(cfg: &ExperimentConfig) -> Outcome {
    let s = commands::finetune(cfg).map_err(err)?;
    let detail = format!(
        "training-normal {:.5}, drifted before {:.5} ({:.3}x), after {} iterations {:.5} ({:.3}x)",
        s.train_normal_mse,
        s.before_mse,
        s.before_ratio(),
        s.iterations,
        s.after_mse,
        s.after_ratio()
    );
    ensure(s.before_ratio() >= 1.5, || format!("{detail}; before < 1.5x"))?;
    ensure(s.after_ratio() <= 1.2, || format!("{detail}; after > 1.2x"))?;
    Ok(detail)
}

fn online_classification(cfg: &ExperimentConfig, summary: &Result<ClassifySummary, String>) -> Outcome {
    let s = summary.as_ref().map_err(Clone::clone)?;
    let first = s.curve.first().ok_or("empty F1 curve")?;
    let last = s.final_macro_f1().ok_or("empty F1 curve")?;
    let detail = format!(
        "macro-F1 at step {} {:.3}, final (step {}) {last:.3}, {} classes",
        first.step, first.macro_f1, s.steps, s.classes
    );
    ensure(first.step == cfg.eval_every, || format!("{detail}; first evaluation not at step {}", cfg.eval_every))?;
    ensure(last >= 0.8, || format!("{detail}; final < 0.8"))?;
    ensure(last >= first.macro_f1, || format!("{detail}; final below first evaluation"))?;
    Ok(detail)
}

fn offline_vs_online(cfg: &ExperimentConfig, online: &Result<ClassifySummary, String>) -> Outcome {
    let online = online.as_ref().map_err(Clone::clone)?.final_macro_f1().ok_or("empty F1 curve")?;
    let b = commands::baseline(cfg).map_err(err)?;
    let long: Vec<&(usize, f64)> = b.sweep.iter().filter(|(e, _)| *e >= 50).collect();
    ensure(!long.is_empty(), || "no sweep entry with at least 50 epochs".into())?;
    let cells: Vec<String> = long.iter().map(|(e, f)| format!("{e} epochs {f:.3}")).collect();
    let detail = format!("online final {online:.3}; offline {}", cells.join(", "));
    ensure(long.iter().all(|(_, f)| *f >= online), || format!("{detail}; offline below online"))?;
    Ok(detail)
}

fn timing_ordering(cfg: &ExperimentConfig) -> Outcome {
    let t = commands::bench(cfg).map_err(err)?;
    let text = std::fs::read_to_string(cfg.out.join(TIMING)).map_err(err)?;
    let header = text.lines().next().unwrap_or_default();
    ensure(header == "mode,iterations,average_us,median_us,min_us,max_us", || {
        format!("timing report header {header:?}")
    })?;
    for row in [&t.inference, &t.online] {
        ensure(row.iterations == cfg.bench_windows, || format!("{} iterations timed", row.iterations))?;
        ensure(row.min_us <= row.median_us && row.median_us <= row.max_us, || format!("{row:?} out of order"))?;
    }
    let detail = format!(
        "{} windows; inference avg {:.2} med {:.2} min {:.2} max {:.2} us; online avg {:.2} med {:.2} min {:.2} max {:.2} us",
        cfg.bench_windows,
        t.inference.average_us,
        t.inference.median_us,
        t.inference.min_us,
        t.inference.max_us,
        t.online.average_us,
        t.online.median_us,
        t.online.min_us,
        t.online.max_us
    );
    ensure(t.online.average_us >= t.inference.average_us, || format!("{detail}; online faster"))?;
    Ok(detail)
}

fn cycling_windows(seed: u64) -> impl Iterator<Item = StreamWindow> {
    let mut streams: Vec<FanStream> = FanMode::ALL
        .iter()
        .map(|&m| FanStream::new(SignalParams::default(), m, Rng::with_stream(seed, m.index() as u64), None))
        .collect();
    (0..).map(move |i: usize| streams[i % 3].next().expect("streams are endless"))
}

fn constant_state(out: &Path) -> Outcome {
    let (model, preproc) = commands::load_artifacts(out).map_err(err)?;
    let reference = commands::corpus_mean_mse(
        &ExperimentConfig {
            out: out.to_path_buf(),
            ..ExperimentConfig::default()
        },
        commands::TRAIN_NORMAL,
        &model,
        &preproc,
    )
    .map_err(err)?;
    let head = RegressionHead::from_layer(model.final_layer(), DEFAULT_ALPHA, GradRule::Bce).map_err(err)?;
    let histogram = MseAccumulator::for_reference_mean(reference).map_err(err)?;
    let fine_tune = Pipeline::fine_tune(model.clone(), preproc.clone(), head, histogram).map_err(err)?;
    let classify = Pipeline::classify(model, preproc, DEFAULT_ALPHA).map_err(err)?;

    let mut sizes = Vec::new();
    for (name, mut p) in [("finetune", fine_tune), ("classify", classify)] {
        let mut windows = cycling_windows(8);
        let mut after_10 = 0;
        for step in 1..=100_000 {
            p.process_sample(&windows.next().expect("endless")).map_err(err)?;
            if step == 10 {
                after_10 = p.state_bytes().len();
            }
        }
        let after_1e5 = p.state_bytes().len();
        ensure(after_10 == after_1e5, || format!("{name}: {after_10} bytes after 10, {after_1e5} after 10^5"))?;
        sizes.push(format!("{name} {after_10} bytes"));
    }
    Ok(format!("state after 10 and after 10^5 samples: {}", sizes.join(", ")))
}

fn class_growth(out: &Path) -> Outcome {
    let mut rng = Rng::new(99);
    let mut head = SoftmaxHead::new(5, DEFAULT_ALPHA).map_err(err)?;
    for _ in 0..200 {
        let f: Vec<f32> = (0..5).map(|_| rng.normal(0.0, 2.0) as f32).collect();
        let y = rng.below(head.classes());
        head.update(&f, y).map_err(err)?;
        if rng.below(20) == 0 && head.classes() < 8 {
            let (w, b) = (head.weights().clone(), head.bias().to_vec());
            let k = head.classes();
            head.add_class().map_err(err)?;
            for c in 0..k {
                let before: Vec<u32> = w.row(c).iter().map(|v| v.to_bits()).collect();
                let after: Vec<u32> = head.weights().row(c).iter().map(|v| v.to_bits()).collect();
                ensure(before == after && b[c].to_bits() == head.bias()[c].to_bits(), || {
                    format!("class {c} changed when growing from {k}")
                })?;
            }
            let g: Vec<f32> = (0..5).map(|_| rng.normal(0.0, 2.0) as f32).collect();
            let total: f64 = head.predict(&g).map_err(err)?.iter().map(|&p| f64::from(p)).sum();
            ensure((total - 1.0).abs() <= 1e-5, || format!("probabilities sum to {total} after growth"))?;
        }
    }
    let grown = head.classes();

    let (model, preproc) = commands::load_artifacts(out).map_err(err)?;
    let mut p = Pipeline::classify(model, preproc, DEFAULT_ALPHA).map_err(err)?;
    let mut growths = 0;
    let mut k = match p.head() {
        Head::Softmax(h) => h.classes(),
        Head::Regression(_) => return Err("classify pipeline holds a regression head".into()),
    };
    for w in cycling_windows(5).take(30) {
        let now = p.process_sample(&w).map_err(err)?.classes.ok_or("classify step without k")?;
        if now != k {
            ensure(now == k + 1, || format!("k jumped from {k} to {now}"))?;
            growths += 1;
            k = now;
        }
    }
    ensure(growths == 2 && k == 3, || format!("labels 0,1,2 grew k {growths} times to {k}"))?;
    Ok(format!("weights preserved bit-exactly through growth to {grown} classes; labels 0,1,2 grew k exactly twice"))
}

fn corruptions(bytes: &[u8]) -> Vec<(&'static str, Vec<u8>)> {
    let mut magic = bytes.to_vec();
    magic[0] ^= 0x20;
    let mut version = bytes.to_vec();
    version[4] = version[4].wrapping_add(1);
    let mut kind = bytes.to_vec();
    kind[5] = 0xEE;
    vec![
        ("magic", magic),
        ("version", version),
        ("first field", kind),
        ("truncated", bytes[..bytes.len() - 1].to_vec()),
        ("header only", bytes[..6].to_vec()),
        ("trailing byte", [bytes, &[0]].concat()),
    ]
}

fn format_roundtrips(out: &Path) -> Outcome {
    let model_bytes = std::fs::read(out.join(MODEL_FILE)).map_err(err)?;
    let preproc_bytes = std::fs::read(out.join(PREPROC_FILE)).map_err(err)?;
    let model = load_model(&model_bytes).map_err(err)?;
    ensure(save_model(&model) == model_bytes, || "TOLM bytes changed on re-save".into())?;
    let preproc = Preproc::from_bytes(&preproc_bytes).map_err(err)?;
    ensure(preproc.to_bytes() == preproc_bytes, || "TOLP bytes changed on re-save".into())?;

    let mut heads = vec![Head::Regression(
        RegressionHead::from_layer(model.final_layer(), DEFAULT_ALPHA, GradRule::MseSigmoid).map_err(err)?,
    )];
    let mut p = Pipeline::classify(model.clone(), preproc.clone(), DEFAULT_ALPHA).map_err(err)?;
    for w in cycling_windows(3).take(300) {
        p.process_sample(&w).map_err(err)?;
    }
    heads.push(p.head().clone());
    let mut softmax = SoftmaxHead::with_classes(3, 5, 0.5).map_err(err)?.without_bias();
    softmax.update(&[1.0, -2.0, 0.5, 0.0, 3.0], 1).map_err(err)?;
    heads.push(Head::Softmax(softmax));
    for h in &heads {
        let bytes = h.to_bytes();
        let back = load_head(&bytes).map_err(err)?;
        ensure(back.to_bytes() == bytes && &back == h, || "TOLH bytes changed on re-save".into())?;
    }

    let mut rejected = 0;
    for (name, bytes) in corruptions(&model_bytes) {
        ensure(load_model(&bytes).is_err(), || format!("TOLM with bad {name} accepted"))?;
        rejected += 1;
    }
    for (name, bytes) in corruptions(&preproc_bytes) {
        if name == "first field" {
            // The first TOLP field is a float; any value there is well formed.
            continue;
        }
        ensure(Preproc::from_bytes(&bytes).is_err(), || format!("TOLP with bad {name} accepted"))?;
        rejected += 1;
    }
    for h in &heads {
        for (name, bytes) in corruptions(&h.to_bytes()) {
            ensure(load_head(&bytes).is_err(), || format!("TOLH with bad {name} accepted"))?;
            rejected += 1;
        }
    }
    // A failed load leaves previously loaded state untouched.
    ensure(save_model(&model) == model_bytes, || "model changed after rejected loads".into())?;
    Ok(format!("TOLM, TOLP and {} TOLH checkpoints re-save bit-identically; {rejected} corruptions rejected", heads.len()))
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("scratch directory");
    let cfg = ExperimentConfig {
        out: dir.path().to_path_buf(),
        ..ExperimentConfig::default()
    };
    let two_min = Some(Duration::from_secs(120));
    let mut suite = Suite { failures: 0 };

    suite.run(1, "streaming stats match two-pass oracle", Some(Duration::from_secs(5)), welford_against_two_pass);
    suite.run(2, "analytic gradients match finite differences", Some(Duration::from_secs(10)), gradient_checks);
    suite.run(3, "abnormal windows reconstruct worse than normal", two_min, || anomaly_separation(&cfg));
    suite.run(4, "fine-tuning recovers from drift", two_min, || drift_fine_tune(&cfg));

    let start = Instant::now();
    let classified = commands::classify(&cfg).map_err(err);
    let classify_time = start.elapsed();
    suite.run(5, "online classification converges", two_min, || {
        let r = online_classification(&cfg, &classified);
        match r {
            Ok(d) if classify_time > Duration::from_secs(120) => Err(format!("{d}; took {classify_time:.1?}")),
            other => other.map(|d| format!("{d}; run took {classify_time:.2?}")),
        }
    });
    suite.run(6, "offline baseline at 50+ epochs beats online", Some(Duration::from_secs(180)), || {
        offline_vs_online(&cfg, &classified)
    });
    suite.run(7, "online iterations cost more than inference", None, || timing_ordering(&cfg));
    suite.run(8, "pipeline state does not grow with the stream", None, || constant_state(&cfg.out));
    suite.run(9, "classes grow without disturbing old ones", None, || class_growth(&cfg.out));
    suite.run(10, "binary formats round-trip and reject corruption", None, || format_roundtrips(&cfg.out));

    println!("{} of 10 criteria passed", 10 - suite.failures);
    if suite.failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use streamtune::{DriftConfig, GradRule};
use streamtune_cli::commands::{self, ExperimentConfig};
use streamtune_cli::{CliError, EXIT_USAGE};

#[derive(Parser)]
#[command(name = "streamtune", version, about = "Online fine-tuning and classification heads on a frozen autoencoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the normal training corpus and the three test corpora
    GenData(Common),
    /// Fit preprocessing and train the autoencoder on the normal corpus
    Train(Common),
    /// Drift the stream, fine-tune the final layer online and time both modes
    Finetune(Common),
    /// Train the online classifier on class blocks and evaluate every few steps
    Classify(Common),
    /// Train offline softmax heads over an epoch sweep
    Baseline(Common),
    /// Time inference-only against online-learning iterations
    Bench(Common),
    /// Compare analytic gradients with finite differences
    Gradcheck(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for every artifact
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Learning rate of the model the command trains
    #[arg(long)]
    alpha: Option<f32>,
    /// bce | mse-sigmoid | paper-literal
    #[arg(long)]
    grad_rule: Option<GradRule>,
    /// Online fine-tune iterations
    #[arg(long, default_value_t = 2000)]
    iterations: usize,
    /// Classification steps between evaluations
    #[arg(long, default_value_t = 50)]
    eval_every: usize,
    /// rx,ry,rz (degrees),gain,ox,oy,oz
    #[arg(long, default_value_t = DriftConfig::default())]
    drift: DriftConfig,
    /// Windows per corpus file and per drift evaluation
    #[arg(long, default_value_t = 3000)]
    windows: usize,
    /// Windows timed per benchmark mode
    #[arg(long, default_value_t = 3000)]
    bench_windows: usize,
    /// Autoencoder training epochs
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    /// Labeled windows per class block
    #[arg(long, default_value_t = 600)]
    block: usize,
    /// Passes over the three class blocks
    #[arg(long, default_value_t = 2)]
    passes: usize,
    /// Offline epoch counts, comma separated
    #[arg(long, value_delimiter = ',', default_value = "1,5,10,50,100,200")]
    sweep: Vec<usize>,
}

impl From<Common> for ExperimentConfig {
    fn from(c: Common) -> Self {
        ExperimentConfig {
            seed: c.seed,
            out: c.out,
            windows: c.windows,
            alpha: c.alpha,
            grad_rule: c.grad_rule,
            iterations: c.iterations,
            bench_windows: c.bench_windows,
            eval_every: c.eval_every,
            drift: c.drift,
            epochs: c.epochs,
            block: c.block,
            passes: c.passes,
            sweep: c.sweep,
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenData(c) => {
            let s = commands::gen_data(&c.into())?;
            for (name, n) in s.files {
                println!("{name}: {n} windows");
            }
        }
        Command::Train(c) => {
            let s = commands::train(&c.into())?;
            println!("loss {:.6} -> {:.6} over {} epochs", s.initial_loss, s.final_loss, s.epochs);
            println!(
                "mean mse: normal {:.6}, stuck {:.6}, tilted {:.6}",
                s.test_normal_mse, s.test_stuck_mse, s.test_tilted_mse
            );
            println!("abnormal/normal ratio {:.3}", s.separation_ratio());
        }
        Command::Finetune(c) => {
            let s = commands::finetune(&c.into())?;
            println!("training-normal mean mse {:.6}", s.train_normal_mse);
            println!("drifted before fine-tune {:.6} ({:.3}x)", s.before_mse, s.before_ratio());
            println!("drifted after {} iterations {:.6} ({:.3}x)", s.iterations, s.after_mse, s.after_ratio());
            print_timing(&s.timing);
        }
        Command::Classify(c) => {
            let s = commands::classify(&c.into())?;
            println!("{} steps, {} classes", s.steps, s.classes);
            if let Some(f) = s.final_macro_f1() {
                println!("final macro-F1 {f:.4}");
            }
        }
        Command::Baseline(c) => {
            let s = commands::baseline(&c.into())?;
            for (e, f) in s.sweep {
                println!("{e:>4} epochs: macro-F1 {f:.4}");
            }
        }
        Command::Bench(c) => print_timing(&commands::bench(&c.into())?),
        Command::Gradcheck(c) => {
            let results = commands::gradcheck(&c.into())?;
            for r in &results {
                println!("{:<24} {:.3e} {}", r.name, r.max_relative_error, if r.passed() { "ok" } else { "FAIL" });
            }
            if let Some(e) = commands::check_failures(&results) {
                return Err(e);
            }
        }
    }
    Ok(())
}

fn print_timing(t: &commands::TimingReport) {
    println!("mode       average   median      min      max  (us)");
    for (name, t) in [("inference", t.inference), ("online", t.online)] {
        println!(
            "{name:<9} {:>8.2} {:>8.2} {:>8.2} {:>8.2}",
            t.average_us, t.median_us, t.min_us, t.max_us
        );
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            e.print().ok();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("streamtune: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

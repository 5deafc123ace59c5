use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sessionrec::harness::output::write_sessions_csv;
use sessionrec::harness::{generate_synthetic_corpus, run_experiment, ExperimentConfig, Stage, SyntheticSpec};

#[derive(Parser)]
#[command(name = "sessionrec", version, about = "Session-based recommendation benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage enabled in the configuration.
    Run(RunArgs),
    /// Run only the hyperparameter search.
    Tune(RunArgs),
    /// Run only the retraining / no-retraining comparison.
    Stability(RunArgs),
    /// Run only the timing measurements.
    Bench(RunArgs),
    /// Write a synthetic corpus as a session_id,item_id,timestamp file.
    Gen(GenArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Output directory, overriding `output_dir`.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Seed, overriding `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Enable a stage (evaluate, tune, stability, bench); repeatable.
    #[arg(long, value_name = "STAGE")]
    enable: Vec<Stage>,
    /// Disable a stage; repeatable.
    #[arg(long, value_name = "STAGE")]
    disable: Vec<Stage>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    items: usize,
    #[arg(long)]
    sessions: usize,
    #[arg(long)]
    span_days: i64,
    /// Probability that an item's planted successor follows it.
    #[arg(long)]
    rule_strength: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5.0)]
    mean_session_length: f64,
    #[arg(long, default_value_t = 1.0)]
    zipf_exponent: f64,
    #[arg(short, long)]
    output: PathBuf,
}

fn run(args: RunArgs, only: Option<Stage>) -> Result<(), String> {
    let mut config = ExperimentConfig::load(&args.config).map_err(|e| format!("[config] {e}"))?;
    if let Some(stage) = only {
        config.stages = [stage].into();
    }
    config.stages.extend(args.enable);
    for s in &args.disable {
        config.stages.remove(s);
    }
    if let Some(dir) = args.output {
        config.output_dir = dir;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let report = run_experiment(&config).map_err(|e| e.to_string())?;
    for row in &report.summary {
        println!(
            "{} @{}: HR={:.4} MRR={:.4} P={:.4} R={:.4} MAP={:.4} COV={:.4} POP={:.4}",
            row.algorithm, row.cutoff, row.hit_rate, row.mrr, row.precision, row.recall, row.map, row.coverage, row.popularity
        );
    }
    for rec in &report.tuning {
        println!("{}: best trial {} -> {}", rec.algorithm, rec.best_trial, rec.best.params_string());
    }
    log::info!("wrote {} files to {}", report.files.len(), config.output_dir.display());
    Ok(())
}

fn gen(args: GenArgs) -> Result<(), String> {
    let spec = SyntheticSpec {
        mean_session_length: args.mean_session_length,
        zipf_exponent: args.zipf_exponent,
        ..SyntheticSpec::new(args.items, args.sessions, args.span_days, args.rule_strength, args.seed)
    };
    let corpus = generate_synthetic_corpus(&spec).map_err(|e| format!("[gen] {e}"))?;
    write_sessions_csv(&args.output, &corpus.sessions).map_err(|e| format!("[gen] {}: {e}", args.output.display()))?;
    println!(
        "wrote {} events in {} sessions to {}",
        corpus.sessions.n_events(),
        corpus.sessions.len(),
        args.output.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a, None),
        Command::Tune(a) => run(a, Some(Stage::Tune)),
        Command::Stability(a) => run(a, Some(Stage::Stability)),
        Command::Bench(a) => run(a, Some(Stage::Bench)),
        Command::Gen(a) => gen(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use feddiv::log::{read_log, LogWriter, RunLogEntry};
use feddiv::metrics::RoundRecord;
use feddiv::{Error, Execution, Experiment, RunConfig, RunOutput, Variant};

#[derive(Parser)]
#[command(name = "feddiv", version, about = "Federated noisy-label learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write run.jsonl and summary.json.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override a config field, e.g. `--set seed=3`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Train participants one after another instead of on the thread pool.
        #[arg(long)]
        sequential: bool,
    },
    /// Run every variant on the same data and write compare.csv.
    Compare {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        sequential: bool,
    },
    /// Print a per-round table of a run log.
    Inspect { log: PathBuf },
}

/// Exit 1: unreadable or malformed input. Exit 2: semantically invalid config.
enum Failure {
    Input(String),
    Semantic(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Semantic(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            out,
            overrides,
            sequential,
        } => run(&config, &out, &overrides, execution(sequential)),
        Command::Compare {
            config,
            out,
            overrides,
            sequential,
        } => compare(&config, &out, &overrides, execution(sequential)),
        Command::Inspect { log } => inspect(&log),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Semantic(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn execution(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))?;
    let config = RunConfig::from_json(&text)
        .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    let config = config.with_overrides(overrides).map_err(Failure::Input)?;
    config.validate()?;
    Ok(config)
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .map_err(|e| Failure::Input(format!("cannot create {}: {e}", dir.display())))
}

/// Run one variant, streaming the log into `dir/run.jsonl`.
fn run_into(
    experiment: &Experiment,
    variant: Variant,
    dir: &Path,
    execution: Execution,
) -> Result<RunOutput, Failure> {
    create_dir(dir)?;
    let config = RunConfig {
        algorithm_variant: variant,
        ..experiment.config.clone()
    };
    let mut log = LogWriter::new(BufWriter::new(File::create(dir.join("run.jsonl"))?));
    log.write(RunLogEntry::ConfigEcho { config })?;
    log.write(RunLogEntry::PartitionSummary(experiment.partition_summary()))?;
    log.write(RunLogEntry::NoiseSummary(experiment.noise_summary()))?;
    let mut write_error = None;
    let output = experiment.run(variant, execution, |record| {
        if write_error.is_none() {
            write_error = log.write(RunLogEntry::RoundRecord(record.clone())).err();
        }
    })?;
    if let Some(e) = write_error {
        return Err(e.into());
    }
    log.write(RunLogEntry::FinalSummary(output.summary.clone()))?;
    log.flush()?;
    let summary = serde_json::to_string_pretty(&output.summary).expect("summary serializes");
    fs::write(dir.join("summary.json"), summary + "\n")?;
    Ok(output)
}

fn run(
    config_path: &Path,
    out: &Path,
    overrides: &[String],
    execution: Execution,
) -> Result<(), Failure> {
    let config = load_config(config_path, overrides)?;
    let experiment = Experiment::prepare(&config)?;
    let output = run_into(&experiment, config.algorithm_variant, out, execution)?;
    println!(
        "{}: best {:.4} final {:.4}",
        config.algorithm_variant.name(),
        output.summary.best_test_accuracy,
        output.summary.final_test_accuracy
    );
    Ok(())
}

fn csv_value(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"))
}

fn compare(
    config_path: &Path,
    out: &Path,
    overrides: &[String],
    execution: Execution,
) -> Result<(), Failure> {
    let config = load_config(config_path, overrides)?;
    let experiment = Experiment::prepare(&config)?;
    create_dir(out)?;
    let mut csv = String::from("variant,best_acc,final_acc,mean_filtering_acc\n");
    for variant in Variant::ALL {
        let output = run_into(&experiment, variant, &out.join(variant.name()), execution)?;
        let s = &output.summary;
        csv.push_str(&format!(
            "{},{:.6},{:.6},{}\n",
            variant.name(),
            s.best_test_accuracy,
            s.final_test_accuracy,
            csv_value(s.mean_filtering_accuracy)
        ));
    }
    fs::write(out.join("compare.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn inspect(path: &Path) -> Result<(), Failure> {
    let file = File::open(path)
        .map_err(|e| Failure::Input(format!("cannot open {}: {e}", path.display())))?;
    let entries = read_log(BufReader::new(file))
        .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{:>6}  {:<7}  {:>8}  {:>12}  {:>9}", "round", "phase", "test_acc", "stability", "filt_acc")?;
    let mut best: Option<f64> = None;
    for entry in &entries {
        match entry {
            RunLogEntry::RoundRecord(r) => writeln!(stdout, "{}", row(r))?,
            RunLogEntry::FinalSummary(s) => best = Some(s.best_test_accuracy),
            _ => {}
        }
    }
    if let Some(best) = best {
        writeln!(stdout, "best test accuracy: {best:.4}")?;
    }
    Ok(())
}

fn row(r: &RoundRecord) -> String {
    let phase = match r.phase {
        feddiv::metrics::Phase::Warmup => "warmup",
        feddiv::metrics::Phase::Train => "train",
    };
    let filt = r
        .mean_filtering_accuracy()
        .map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
    format!(
        "{:>6}  {:<7}  {:>8.4}  {:>12.6}  {:>9}",
        r.round, phase, r.test_accuracy, r.training_stability, filt
    )
}

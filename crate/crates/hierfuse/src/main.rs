use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hierfuse::commands::{self, GradcheckReport};
use hierfuse::config::{GradcheckConfig, RunConfig};
use hierfuse::error::{exit, CliError, Result};
use hierfuse::exec::Parallel;
use hierfuse::io::MetricsReport;

const EXIT_CODES: &str = "\
Exit codes:
  0   success
  1   gradcheck: a tensor's max relative error reached the tolerance
  2   an input file does not exist (the message names it)
  3   invalid configuration or spec
  4   invalid dataset or model file
  5   an output file could not be written
  6   training or evaluation failed
  64  bad command-line usage

Environment:
  HIERFUSE_THREADS  worker threads (default: machine parallelism)";

#[derive(Parser)]
#[command(name = "hierfuse", version, about = "Context-aware hierarchical multimodal fusion", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate; several configs are compared side by side
    #[command(after_help = EXIT_CODES)]
    Run {
        #[arg(long, required = true)]
        config: Vec<PathBuf>,
        /// Suppress per-epoch progress
        #[arg(long)]
        quiet: bool,
    },
    /// Compare backward against finite differences for a configured model
    #[command(after_help = EXIT_CODES)]
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write a synthetic train/test dataset
    #[command(after_help = EXIT_CODES)]
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a saved model on a dataset
    #[command(after_help = EXIT_CODES)]
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Also write the metrics JSON here
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn summary(label: &str, r: &MetricsReport) -> String {
    let mut line = format!(
        "{label}: accuracy {:.4}  weighted F1 {:.4}  ({} utterances)",
        r.metrics.accuracy, r.metrics.f1_weighted, r.metrics.n_utterances
    );
    if let (Some(best), Some(run)) = (r.best_epoch, r.epochs_run) {
        line.push_str(&format!("  best epoch {best} of {run}"));
    }
    if r.plain_baseline {
        line.push_str("  [plain baseline: dense softmax on raw features]");
    }
    line
}

fn run(configs: &[PathBuf], quiet: bool) -> Result<()> {
    let exec = Parallel::from_env()?;
    let mut rows = Vec::new();
    for path in configs {
        let cfg = RunConfig::load(path)?;
        let label = format!("{} {}", cfg.model.variant, cfg.model.modalities);
        let rep = commands::run(&cfg, &exec, |r| {
            if !quiet {
                eprintln!(
                    "[{label}] epoch {:>3}  train {:.4}  val {:.4}  val acc {:.4}",
                    r.epoch, r.train_loss, r.val_loss, r.val_acc
                );
            }
        })?;
        println!("{}", summary(&label, &rep));
        println!("  wrote {}", cfg.output.display());
        rows.push((label, rep));
    }
    if rows.len() > 1 {
        println!();
        println!("{:<20} {:>9} {:>12}", "model", "accuracy", "weighted F1");
        for (label, r) in &rows {
            println!("{label:<20} {:>9.4} {:>12.4}", r.metrics.accuracy, r.metrics.f1_weighted);
        }
    }
    Ok(())
}

fn gradcheck(path: &Path) -> Result<()> {
    let cfg = GradcheckConfig::load(path)?;
    let report: GradcheckReport = commands::gradcheck(&cfg)?;
    println!(
        "gradcheck {} {}  epsilon {:e}  tolerance {:e}",
        cfg.model.variant, cfg.model.modalities, cfg.gradcheck.epsilon, report.tolerance
    );
    println!("{:<16} {:>14} {:>14}", "tensor", "max rel err", "max abs err");
    for e in &report.errors {
        let flag = if e.max_relative_error < report.tolerance { "" } else { "  FAIL" };
        println!("{:<16} {:>14.3e} {:>14.3e}{flag}", e.name, e.max_relative_error, e.max_abs_error);
    }
    let worst = report.errors.iter().map(|e| e.max_relative_error).fold(0.0, f64::max);
    println!("worst max rel err {worst:.3e}");
    let failed = report.failures();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::GradcheckFailed(failed))
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, quiet } => run(&config, quiet),
        Command::Gradcheck { config } => gradcheck(&config),
        Command::Synth { spec, out } => {
            let (train, test) = commands::synth(&spec, &out)?;
            println!("wrote {} and {}", train.display(), test.display());
            Ok(())
        }
        Command::Eval { model, data, out } => {
            let exec = Parallel::from_env()?;
            let rep = commands::eval(&model, &data, &exec)?;
            let text = serde_json::to_string_pretty(&rep).map_err(|e| CliError::Runtime(e.to_string()))?;
            println!("{text}");
            if let Some(path) = out {
                hierfuse::io::write_json(&path, &rep)?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE as u8 } else { exit::OK as u8 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

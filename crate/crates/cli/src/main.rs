//! `lmnet`: train, compare and check the Levenberg-Marquardt optimizer.
//!
//! Exit codes: 0 on success, 1 for usage or configuration errors, 2 for
//! runtime failures (including failed checks).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use lmnet::data;
use lmnet::harness::{self, CheckKind, ExperimentConfig, PlotOptions, RunRecord};

#[derive(Parser)]
#[command(name = "lmnet", version, about = "Levenberg-Marquardt training for small neural networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a noisy sine dataset as `x,y` CSV.
    GenData(GenData),
    /// Run one experiment from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// CSV output; defaults to the config's `out`, else standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run several configs and plot one metric from all of them.
    Compare {
        #[arg(long, value_delimiter = ',', required = true)]
        configs: Vec<PathBuf>,
        #[arg(long)]
        plot: PathBuf,
        /// Directory for the per-config CSVs; defaults to the plot's directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        style: PlotStyle,
    },
    /// Run the numerical oracle suites; with no flag, all of them.
    Check {
        #[arg(long)]
        grad: bool,
        #[arg(long)]
        ggn: bool,
        #[arg(long)]
        hvp: bool,
        #[arg(long)]
        momentum: bool,
    },
    /// Plot one column from existing run CSVs.
    Plot {
        #[arg(long, value_delimiter = ',', required = true)]
        csv: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        style: PlotStyle,
    },
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 400)]
    n: usize,
    #[arg(long, default_value_t = -2.0 * std::f64::consts::PI, allow_negative_numbers = true)]
    x_lo: f64,
    #[arg(long, default_value_t = 2.0 * std::f64::consts::PI, allow_negative_numbers = true)]
    x_hi: f64,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct PlotStyle {
    #[arg(long, default_value = "train_loss")]
    column: String,
    #[arg(long)]
    log_y: bool,
    #[arg(long)]
    title: Option<String>,
}

impl PlotStyle {
    fn options(&self) -> PlotOptions {
        PlotOptions {
            log_y: self.log_y,
            title: self.title.clone(),
        }
    }
}

enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<lmnet::Error> for Failure {
    fn from(e: lmnet::Error) -> Self {
        if e.is_config_error() {
            Failure::Config(e.into())
        } else {
            Failure::Runtime(e.into())
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))
        .map_err(Failure::Config)?;
    harness::parse_config(&text)
        .with_context(|| format!("in {}", path.display()))
        .map_err(Failure::Config)
}

fn summarize(label: &str, records: &[RunRecord]) {
    let Some(last) = records.last() else { return };
    if harness::diverged(records) {
        eprintln!("{label}: loss became non-finite at iteration {}", last.iter);
        return;
    }
    let mut line = format!(
        "{label}: {} iterations, train_loss {:.6e}",
        last.iter, last.train_loss
    );
    if let Some(acc) = records.iter().rev().find_map(|r| r.test_acc) {
        line.push_str(&format!(", test_acc {acc:.4}"));
    }
    if let Some(e) = harness::epochs_to_accuracy(records, 0.9) {
        line.push_str(&format!(", 90% test accuracy at epoch {e}"));
    }
    line.push_str(&format!(", {:.1}s", last.wall_time_s));
    eprintln!("{line}");
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenData(a) => {
            let ds = data::gen_sine(a.n, a.x_lo, a.x_hi, a.noise, a.seed)?;
            data::write_sine_csv(&ds, &a.out)?;
            eprintln!("wrote {} samples to {}", ds.len(), a.out.display());
        }
        Command::Train { config, out } => {
            let mut cfg = load_config(&config)?;
            if out.is_some() {
                cfg.out = out;
            }
            if cfg.task == harness::Task::Mnist {
                eprintln!(
                    "reading {} from {}",
                    data::MNIST_FILES.join(", "),
                    cfg.mnist_dir.display()
                );
            }
            let records = harness::run_experiment(&cfg)?;
            if cfg.out.is_none() {
                harness::write_records(&records, std::io::stdout().lock())?;
            }
            summarize(&config.display().to_string(), &records);
        }
        Command::Compare {
            configs,
            plot,
            out_dir,
            style,
        } => {
            let dir = out_dir
                .or_else(|| plot.parent().map(Path::to_path_buf))
                .unwrap_or_default();
            let mut cfgs = Vec::new();
            for path in &configs {
                let mut cfg = load_config(path)?;
                let stem = path.file_stem().unwrap_or_default();
                cfg.out = Some(dir.join(stem).with_extension("csv"));
                cfgs.push((path, cfg));
            }
            let mut csvs = Vec::new();
            for (path, cfg) in cfgs {
                let records = harness::run_experiment(&cfg)?;
                summarize(&path.display().to_string(), &records);
                csvs.extend(cfg.out);
            }
            harness::emit_plot(&csvs, &style.column, &plot, &style.options())?;
            eprintln!("wrote {}", plot.display());
        }
        Command::Check {
            grad,
            ggn,
            hvp,
            momentum,
        } => {
            let picked: Vec<CheckKind> = [
                (grad, CheckKind::Grad),
                (ggn, CheckKind::Ggn),
                (hvp, CheckKind::Hvp),
                (momentum, CheckKind::Momentum),
            ]
            .into_iter()
            .filter_map(|(on, k)| on.then_some(k))
            .collect();
            let kinds = if picked.is_empty() { CheckKind::ALL.to_vec() } else { picked };
            let reports = harness::run_checks(&kinds)?;
            for r in &reports {
                println!("{r}");
            }
            if !reports.iter().all(|r| r.passed()) {
                return Err(Failure::Runtime(anyhow::anyhow!("some checks failed")));
            }
        }
        Command::Plot { csv, out, style } => {
            harness::emit_plot(&csv, &style.column, &out, &style.options())?;
            eprintln!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

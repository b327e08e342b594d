use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use choicenet::{Error, Result};
use choicenet_cli::config::ExperimentConfig;
use choicenet_cli::plot::{figure, render, PlotKind};
use choicenet_cli::results::Table;
use choicenet_cli::runner::{run_experiment, RunOptions};
use choicenet_cli::summary::{summarize, write_summary, Goal, DEFAULT_GROUP_BY};
use choicenet_cli::{exit_code, selfcheck};

#[derive(Parser)]
#[command(name = "choicenet", version, about = "Train and compare mixture heads on corrupted data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (method, rate, seed) job of an experiment manifest.
    Run {
        config: PathBuf,
        /// One worker and zeroed wall-clock column, for byte-identical reruns.
        #[arg(long)]
        single_thread: bool,
        /// Parallel workers (default: available cores).
        #[arg(long)]
        workers: Option<usize>,
        /// Override a manifest key, e.g. `--set train.epochs=5`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, short)]
        quiet: bool,
    },
    /// Median, mean and std of the last and best test metric over seeds.
    Summarize {
        csv: PathBuf,
        /// Comma-separated grouping columns.
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_GROUP_BY.map(String::from))]
        group_by: Vec<String>,
        /// Whether lower (`min`, RMSE) or higher (`max`, accuracy) is better.
        #[arg(long, default_value = "min")]
        goal: String,
        /// Output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render an SVG plot from a results, summary or fit CSV.
    Plot {
        csv: PathBuf,
        /// rmse_vs_rate, learning_curve or fit_overlay.
        #[arg(long)]
        kind: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Statistical and gradient checks of the core library.
    Selfcheck,
}

fn read_table(path: &PathBuf) -> Result<Table> {
    let f = File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Table::read(f, &path.display().to_string())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config, single_thread, workers, overrides, quiet } => {
            let pairs = overrides
                .iter()
                .map(|o| {
                    o.split_once('=')
                        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                        .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {o:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            let cfg = ExperimentConfig::load_with_overrides(&config, &pairs)?;
            let opts = RunOptions { single_thread, workers, verbose: !quiet };
            let out = run_experiment(&cfg, &opts)?;
            if !quiet {
                eprintln!("wrote {} rows to {} and {}", out.rows, out.results.display(), out.summary.display());
            }
            Ok(true)
        }
        Command::Summarize { csv, group_by, goal, out } => {
            let goal: Goal = goal.parse()?;
            let groups = summarize(&read_table(&csv)?, &group_by, goal)?;
            match out {
                Some(p) => write_summary(BufWriter::new(File::create(p)?), &group_by, &groups)?,
                None => write_summary(std::io::stdout().lock(), &group_by, &groups)?,
            }
            Ok(true)
        }
        Command::Plot { csv, kind, out } => {
            let kind: PlotKind = kind.parse()?;
            let svg = render(&figure(kind, &read_table(&csv)?)?)?;
            fs::write(out, svg)?;
            Ok(true)
        }
        Command::Selfcheck => {
            let mut ok = true;
            for check in selfcheck::run_all() {
                println!("{}", check.line());
                ok &= check.passed;
            }
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

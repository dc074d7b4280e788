use std::fs;
use std::io;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use bringme::bench::{emit_report, read_csv, run_grid, Experiment, ReportFormat};
use bringme::chat::Repl;
use bringme::llm::ENDPOINT_ENV;
use bringme::resolve::{Approach, Situation};

#[derive(Parser)]
#[command(
    version,
    about = "Knowledge-grounded fetch-task planner and experiment harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment grid and write records, report and episode logs.
    Run {
        /// Experiment file; the built-in household experiment when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Overrides the experiment seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; 0 uses every core, 1 runs sequentially.
        #[arg(long, default_value_t = 0)]
        parallelism: usize,
        /// Format printed to stdout after the run.
        #[arg(long, default_value = "markdown")]
        format: String,
    },
    /// Render a report from a records CSV.
    Report {
        records: PathBuf,
        #[arg(long, default_value = "markdown")]
        format: String,
    },
    /// Interactive session: type commands and answer the robot's questions.
    Chat {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value = "okb_llm_mem")]
        approach: Approach,
        #[arg(long, default_value = "with_defaults")]
        situation: Situation,
    },
}

fn load(spec: Option<&PathBuf>) -> Result<Experiment> {
    match spec {
        Some(path) => Experiment::load(path).with_context(|| format!("loading {}", path.display())),
        None => Ok(Experiment::builtin()),
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Cmd::Run {
            spec,
            out,
            seed,
            parallelism,
            format,
        } => {
            let format: ReportFormat = format.parse()?;
            let mut experiment = load(spec.as_ref())?;
            if let Some(seed) = seed {
                experiment.spec.seed = seed;
            }
            if experiment.backend.is_live() {
                log::info!("using live backend from {ENDPOINT_ENV} or spec");
            }
            let started = Instant::now();
            let runs = run_grid(&experiment, parallelism);
            log::info!("{} episodes in {:.2?}", runs.len(), started.elapsed());

            let logs = out.join("logs");
            fs::create_dir_all(&logs).with_context(|| format!("creating {}", logs.display()))?;
            for run in &runs {
                fs::write(logs.join(run.log_name()), run.log.to_ndjson())?;
            }
            let records: Vec<_> = runs.into_iter().map(|r| r.record).collect();
            fs::write(
                out.join("records.csv"),
                emit_report(&records, ReportFormat::Csv)?,
            )?;
            fs::write(
                out.join("report.md"),
                emit_report(&records, ReportFormat::Markdown)?,
            )?;
            print!("{}", emit_report(&records, format)?);
        }
        Cmd::Report { records, format } => {
            let format: ReportFormat = format.parse()?;
            let text = fs::read_to_string(&records)
                .with_context(|| format!("reading {}", records.display()))?;
            print!("{}", emit_report(&read_csv(&text)?, format)?);
        }
        Cmd::Chat {
            spec,
            approach,
            situation,
        } => {
            let experiment = load(spec.as_ref())?;
            let stdin = io::stdin();
            Repl::new(&experiment, approach, situation, stdin.lock(), io::stdout()).run()?;
        }
    }
    Ok(())
}

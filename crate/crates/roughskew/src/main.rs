use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser};
use log::info;
use roughskew::error::{EXIT_OK, EXIT_SELFTEST, EXIT_VALIDATION};
use roughskew::exec::{resolve_threads, THREADS_ENV};
use roughskew::experiment::{run_figures, run_selftest, run_table};
use roughskew::{AppError, AppResult, ExperimentConfig, Parallel};

/// Reproduce the rough Bergomi skew/covariance tables and figure data.
#[derive(Debug, Parser)]
#[command(name = "roughskew", version)]
#[command(group(ArgGroup::new("mode").required(true).multiple(true).args(["table", "figures", "selftest"])))]
struct Cli {
    /// Write one TSV per correlation with the skew/covariance table.
    #[arg(long)]
    table: bool,
    /// Write fig1.txt to fig4.txt.
    #[arg(long)]
    figures: bool,
    /// Run the fast invariant checks.
    #[arg(long)]
    selftest: bool,
    /// Experiment config (TOML); the full study grid at 200,000 paths if omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Paths per cell.
    #[arg(long, value_name = "N")]
    paths: Option<usize>,
    /// Worker threads [default: $ROUGHSKEW_THREADS, else all cores].
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> AppResult<i32> {
    let base = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let cfg = base.with_overrides(cli.seed, cli.paths, cli.out.clone())?;
    let threads = resolve_threads(cli.threads, cfg.output.threads);
    let exec = Parallel::new(threads)?;
    info!("config {} seed {} on {threads} threads ({THREADS_ENV} sets the default)", cfg.hash(), cfg.simulation.seed);

    let mut code = EXIT_OK;
    if cli.selftest {
        let report = run_selftest(&cfg, &exec)?;
        print!("{}", report.render());
        if report.failed() > 0 {
            code = EXIT_SELFTEST;
        }
    }
    if cli.table {
        let out = run_table(&cfg, &exec)?;
        for f in &out.files {
            println!("wrote {}", f.display());
        }
        if let Err(e) = out.into_result() {
            eprintln!("error: {e}");
            code = code.max(e.exit_code());
        }
    }
    if cli.figures {
        let (files, _) = run_figures(&cfg, &exec)?;
        for f in &files {
            println!("wrote {}", f.display());
        }
    }
    Ok(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_VALIDATION as u8 } else { EXIT_OK as u8 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(AppError::exit_code(&e) as u8)
        }
    }
}

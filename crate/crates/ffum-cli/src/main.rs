use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand};
use ffum_cli::config::ExperimentConfig;
use ffum_cli::report;
use ffum_cli::runner::{self, RunOutcome, SweepAxis};
use ffum_core::{CheckStatus, Error, Result};

#[derive(Parser)]
#[command(name = "ffum", version, about = "Deterministic federated learning and unlearning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Exit with status 2 if any ordering check fails.
        #[arg(long)]
        strict: bool,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the config once per axis value and aggregate a comparison table.
    Sweep {
        config: PathBuf,
        /// Axis to vary: method, forget_fraction, or num_clients.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values.
        #[arg(long)]
        values: String,
        /// Override the config's output directory (used as the sweep root).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFinite { .. } => 3,
        _ => 1,
    }
}

/// FFUM_THREADS caps worker parallelism; unset leaves the default pool.
fn init_thread_pool() -> Result<()> {
    match std::env::var("FFUM_THREADS") {
        Ok(v) => {
            let n = v
                .trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n >= 1)
                .ok_or_else(|| {
                    Error::Config(format!("FFUM_THREADS must be a positive integer, got {v:?}"))
                })?;
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Error::Config(format!("could not size the thread pool: {e}")))
        }
        Err(_) => Ok(()),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

fn status_word(s: CheckStatus) -> &'static str {
    match s {
        CheckStatus::Pass => "pass",
        CheckStatus::Fail => "FAIL",
        CheckStatus::NotApplicable => "n/a",
    }
}

fn print_run_summary(outcome: &RunOutcome) {
    let p = &outcome.pretrained_metrics;
    println!(
        "pretrained: test_acc {:.4} asr {} mia {} ({} clients, {:.1}% of the data marked for removal)",
        p.test_acc,
        fmt_opt(p.backdoor_asr),
        fmt_opt(p.mia_score),
        outcome.n_clients,
        outcome.removed_pct,
    );
    for m in &outcome.methods {
        let checks = if m.checks.is_empty() {
            String::new()
        } else {
            let parts: Vec<String> =
                m.checks.iter().map(|(k, c)| format!("{k}={}", status_word(c.status))).collect();
            format!(" [{}]", parts.join(" "))
        };
        println!(
            "{}: test_acc {:.4} retain {} forget {} asr {} mia {} comm {}{}",
            m.name,
            m.metrics.test_acc,
            fmt_opt(m.metrics.retain_acc),
            fmt_opt(m.metrics.forget_acc),
            fmt_opt(m.metrics.backdoor_asr),
            fmt_opt(m.metrics.mia_score),
            m.comm_rounds_used,
            checks,
        );
    }
    println!(
        "outputs in {} ({} ms total)",
        outcome.config.output_dir.display(),
        outcome.wall_ms_total
    );
}

fn try_main(cli: Cli) -> Result<ExitCode> {
    init_thread_pool()?;
    match cli.command {
        Command::Run { config, strict, out, seed } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(dir) = out {
                cfg.output_dir = dir;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let outcome = runner::run_experiment(&cfg)?;
            report::write_run_outputs(&cfg.output_dir, &outcome)?;
            print_run_summary(&outcome);
            if strict && outcome.any_check_failed() {
                eprintln!("strict mode: an ordering check failed");
                return Ok(ExitCode::from(2));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { config, axis, values, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(dir) = out {
                cfg.output_dir = dir;
            }
            let axis = SweepAxis::from_str(&axis)?;
            let values: Vec<String> = values
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect();
            let out_root = cfg.output_dir.clone();
            let outcome = runner::run_sweep(&cfg, axis, &values, &out_root)?;
            for p in &outcome.points {
                match &p.result {
                    Ok(()) => {
                        println!("point {} ({}): outputs in {}", p.index, p.value, p.dir.display())
                    }
                    Err(e) => eprintln!("point {} ({}) failed: {e}", p.index, p.value),
                }
            }
            println!("{} table rows in {}", outcome.rows, outcome.csv_path.display());
            match outcome.first_error() {
                Some(e) => Ok(ExitCode::from(exit_code(e))),
                None => Ok(ExitCode::SUCCESS),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match try_main(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

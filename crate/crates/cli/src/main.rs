use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use pocrm_cli::commands::{self, MethodChoice, ReplayOptions, SimulateOptions};
use pocrm_cli::service::{self, AppState};
use pocrm_cli::store::Store;

#[derive(Debug, Parser)]
#[command(
    name = "pocrm",
    version,
    about = "Dose finding for drug-combination trials"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate operating characteristics over toxicity scenarios.
    Simulate {
        /// Design config (JSON).
        #[arg(long, default_value = "data/configs/simulation.json")]
        config: PathBuf,
        /// Scenario files or directories of them.
        #[arg(long, num_args = 1.., required = true)]
        scenarios: Vec<PathBuf>,
        /// Replications per scenario and method.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        reps: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = MethodChoice::Both)]
        method: MethodChoice,
        /// Output directory for oc.csv and oc.json.
        #[arg(long, default_value = "results/simulation")]
        out: PathBuf,
        /// Worker threads; 0 uses all cores.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Replay a completed trial under both methods.
    Replay {
        /// Source counts (JSON or CSV).
        #[arg(long, default_value = "data/case_study/synthetic_4x4.json")]
        data: PathBuf,
        #[arg(long, default_value = "data/configs/case_study.json")]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "results/replay")]
        out: PathBuf,
    },
    /// Print the standard orderings and toxicity sets for a grid, or
    /// validate an orderings file.
    Orderings {
        #[arg(long, default_value_t = 3)]
        rows: usize,
        #[arg(long, default_value_t = 2)]
        cols: usize,
        /// Orderings file to validate instead of the standard set.
        #[arg(long)]
        file: Option<PathBuf>,
        /// Drop repeated orderings.
        #[arg(long)]
        dedup: bool,
    },
    /// Run the live-trial HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        /// Journal directory; trials are kept in memory only when absent.
        #[arg(long, env = "POCRM_STORE")]
        store: Option<PathBuf>,
        /// Bearer token required on POST and DELETE.
        #[arg(long, env = "POCRM_TOKEN", hide_env_values = true)]
        token: Option<String>,
    },
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Simulate {
            config,
            scenarios,
            reps,
            seed,
            method,
            out,
            jobs,
        } => {
            let report = commands::simulate(&SimulateOptions {
                config,
                scenarios,
                reps: reps as usize,
                seed,
                methods: method.methods(),
                out: out.clone(),
                jobs,
            })?;
            println!(
                "{:<24} {:<10} {:>6} {:>6} {:>6} {:>10} {:>7}",
                "scenario", "method", "pcs", "pas", "pots", "incoherent", "rmse"
            );
            for r in report.rows.iter().chain(&report.means) {
                println!(
                    "{:<24} {:<10} {:>6.3} {:>6.3} {:>6.3} {:>10.3} {:>7.4}",
                    r.label, r.method, r.pcs, r.pas, r.pots, r.incoherent_proportion, r.rmse_mean
                );
            }
            println!("wrote {}", out.display());
        }
        Command::Replay {
            data,
            config,
            seed,
            out,
        } => {
            let report = commands::replay_case_study(&ReplayOptions {
                data,
                config,
                seed,
                out: out.clone(),
            })?;
            for s in &report.summaries {
                println!(
                    "{:<10} recommends {}  events {} ({} estimation)  largest change {:+.3} / {:+.3}",
                    s.method,
                    s.recommendation,
                    s.coherency_events,
                    s.estimation_events,
                    s.changes.min_delta,
                    s.changes.max_delta
                );
            }
            println!("wrote {}", out.display());
        }
        Command::Orderings {
            rows,
            cols,
            file,
            dedup,
        } => {
            let report = commands::orderings(rows, cols, file.as_deref(), dedup)?;
            let mut out = std::io::stdout().lock();
            match writeln!(out, "{}", serde_json::to_string_pretty(&report)?) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(e.into()),
                _ => {}
            }
            if !report.violations.is_empty() {
                for v in &report.violations {
                    eprintln!("invalid ordering: {v}");
                }
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Serve { bind, store, token } => {
            let store = store
                .map(Store::open)
                .transpose()
                .context("opening store")?;
            let state = AppState::new(store, token).context("loading stored trials")?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::bind(bind)
                    .await
                    .with_context(|| format!("binding {bind}"))?;
                let addr = listener.local_addr()?;
                tracing::info!(trials = state.trial_count(), "loaded trials");
                println!("listening on {addr}");
                service::serve(listener, state).await?;
                anyhow::Ok(())
            })?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

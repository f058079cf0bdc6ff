use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use board_cli::scenario;
use board_cli::sim::{simulate, DelayModel, SimConfig};
use board_core::ProjectId;
use board_server::ServerConfig;
use board_store::{Store, DEFAULT_COMPACT_THRESHOLD};
use clap::{Parser, Subcommand};

const CHECK_FAILED: u8 = 1;
const STARTUP_ERROR: u8 = 2;

#[derive(Parser)]
#[command(name = "board", version, about = "Collaborative innovation boards")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sync server.
    Serve {
        #[arg(long)]
        port: u16,
        #[arg(long, env = "BOARD_DATA_DIR")]
        data_dir: PathBuf,
        #[arg(long)]
        locale_dir: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_COMPACT_THRESHOLD)]
        compact_threshold: usize,
        #[arg(long, default_value = "0.0.0.0")]
        host: std::net::IpAddr,
    },
    /// Run the multi-client convergence simulation and print its report.
    Simulate {
        #[arg(long, default_value_t = 3)]
        clients: usize,
        #[arg(long, default_value_t = 200)]
        ops: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "uniform")]
        delay: DelayModel,
    },
    /// Replay a scenario script and compare it with its golden files.
    Replay {
        #[arg(long)]
        script: PathBuf,
        #[arg(long)]
        update_golden: bool,
    },
    /// Write a project export.
    Export {
        #[arg(long)]
        project: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = "BOARD_DATA_DIR")]
        data_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Serve {
            port,
            data_dir,
            locale_dir,
            compact_threshold,
            host,
        } => serve(
            SocketAddr::new(host, port),
            ServerConfig {
                data_dir,
                locale_dir,
                compact_threshold,
            },
        ),
        Command::Simulate {
            clients,
            ops,
            seed,
            delay,
        } => run_simulation(SimConfig::new(clients, ops, seed, delay)),
        Command::Replay { script, update_golden } => replay(script, update_golden),
        Command::Export { project, out, data_dir } => export(&project, &out, data_dir),
    }
}

fn serve(addr: SocketAddr, config: ServerConfig) -> ExitCode {
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return ExitCode::from(STARTUP_ERROR);
        }
    };
    runtime.block_on(async move {
        let state = match board_server::AppState::new(&config) {
            Ok(state) => state,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(STARTUP_ERROR);
            }
        };
        let listener = match board_server::bind(addr).await {
            Ok(l) => l,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(STARTUP_ERROR);
            }
        };
        tracing::info!(addr = %addr, data_dir = %config.data_dir.display(), "listening");
        match board_server::serve(listener, state, shutdown_signal()).await {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(STARTUP_ERROR)
            }
        }
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
    tracing::info!("shutting down");
}

fn run_simulation(config: SimConfig) -> ExitCode {
    match simulate(&config) {
        Ok(report) => {
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            if report.converged {
                ExitCode::SUCCESS
            } else {
                eprintln!("simulation did not converge");
                ExitCode::from(CHECK_FAILED)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(STARTUP_ERROR)
        }
    }
}

fn replay(path: PathBuf, update: bool) -> ExitCode {
    let result = scenario::load_script(&path).and_then(|script| {
        let replay = scenario::replay(&script)?;
        let mismatches = scenario::check_goldens(&path, &script.goldens, &replay.artifacts, update)?;
        Ok((script, replay, mismatches))
    });
    match result {
        Ok((script, replay, mismatches)) => {
            println!(
                "replayed {} steps, {} clients, {} boards",
                script.steps.len(),
                script.clients.len(),
                replay.doc.boards.len()
            );
            if update {
                println!("goldens updated");
                return ExitCode::SUCCESS;
            }
            if mismatches.is_empty() {
                println!("goldens match");
                return ExitCode::SUCCESS;
            }
            for m in &mismatches {
                eprintln!("mismatch: {}\n{}", m.golden.display(), m.diff);
            }
            ExitCode::from(CHECK_FAILED)
        }
        Err(scenario::ScenarioError::Diverged(client)) => {
            eprintln!("client {client} diverged from the server");
            ExitCode::from(CHECK_FAILED)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(STARTUP_ERROR)
        }
    }
}

fn export(project: &str, out: &PathBuf, data_dir: PathBuf) -> ExitCode {
    let result = Store::open(data_dir)
        .and_then(|store| store.export(&ProjectId::new(project)))
        .map_err(|e| e.to_string())
        .and_then(|json| std::fs::write(out, json).map_err(|e| format!("{}: {e}", out.display())));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(STARTUP_ERROR)
        }
    }
}

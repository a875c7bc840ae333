use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use feeding_cli::commands::{self, features_path};
use feeding_cli::exit;
use feeding_cli::serve::{self, ServeConfig};

#[derive(Parser)]
#[command(name = "feeding", version, about = "Robot-assisted feeding simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the live service for the browser console.
    Serve {
        /// Scenario file; the standard layout when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "127.0.0.1")]
        bind: IpAddr,
        /// Simulated seconds per wall second; 0 runs unpaced.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Calibration file, loaded at start and saved on every change.
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Session record written on shutdown.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Execute a command script in simulated time.
    Run {
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// JSON command script.
        #[arg(long)]
        script: PathBuf,
        /// Session record; feature sequences go next to it.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-run a session record and compare transitions.
    Replay {
        #[arg(long)]
        record: PathBuf,
        /// Scenario file; the one named in the record when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Train a nominal monitor model from recorded feature files.
    TrainMonitor {
        /// Directory holding `*.features.json` files.
        #[arg(long)]
        data: PathBuf,
        /// scoop, wipe or deliver.
        #[arg(long)]
        subtask: String,
        /// Model file; `<data>/<subtask>.model.json` when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::ERROR)
        }
    }
}

fn dispatch(command: Command) -> Result<u8> {
    match command {
        Command::Serve { scenario, port, seed, bind, speed, calibration, out } => {
            let scenario = commands::load_scenario(scenario.as_deref(), seed)?;
            let speed = (speed > 0.0).then_some(speed);
            let cfg = ServeConfig { scenario, addr: SocketAddr::new(bind, port), speed, calibration };
            tokio::runtime::Runtime::new()?.block_on(async move {
                let server = serve::start(cfg).await?;
                println!("console at http://{}/", server.addr);
                tokio::signal::ctrl_c().await?;
                log::info!("stopping; a running subtask returns to idle first");
                let done = server.stop().await?;
                if let Some(out) = out {
                    done.record.save(&out)?;
                    println!("record written to {}", out.display());
                }
                match done.error {
                    Some(e) => anyhow::bail!("executive stopped: {e}"),
                    None => Ok(exit::OK),
                }
            })
        }
        Command::Run { scenario, script, out, seed } => {
            let scenario = commands::load_scenario(scenario.as_deref(), seed)?;
            let run = commands::run(&scenario, &script, out.as_deref())?;
            let summary = run.record.summary();
            println!("session {}", run.record.header.session_id);
            println!("{}", serde_json::to_string_pretty(&summary)?);
            if let Some(out) = out {
                println!("record written to {} and {}", out.display(), features_path(&out).display());
            }
            Ok(if summary.all_succeeded { exit::OK } else { exit::FAILED })
        }
        Command::Replay { record, scenario } => {
            let report = commands::replay_record(&record, scenario.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(if report.matched { exit::OK } else { exit::FAILED })
        }
        Command::TrainMonitor { data, subtask, out } => {
            let t = commands::train(&data, &subtask)?;
            let out = out.unwrap_or_else(|| data.join(format!("{subtask}.model.json")));
            std::fs::write(&out, t.model.to_json())?;
            println!("trained on {} of {} {subtask} sequences; model written to {}", t.used, t.found, out.display());
            Ok(exit::OK)
        }
    }
}

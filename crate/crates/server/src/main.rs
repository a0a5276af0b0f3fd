use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use kcap_core::ids::DpId;
use kcap_core::{KnowledgeService, ServiceConfig};
use kcap_server::Server;

#[derive(Parser)]
#[command(name = "kcap", version, about = "Knowledge capitalization service and admin tool")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Seed a built-in scenario into the data directory and print its summary.
    Seed {
        name: String,
        #[arg(long)]
        config: PathBuf,
    },
    /// Write log records, optionally restricted to one decision problem.
    Export {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        dp: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Verify a log file record by record.
    CheckLog { path: PathBuf },
}

fn load(path: Option<&PathBuf>) -> anyhow::Result<ServiceConfig> {
    match path {
        Some(p) => Ok(ServiceConfig::load(p)?),
        None => Ok(ServiceConfig::default()),
    }
}

fn token() -> String {
    uuid::Uuid::new_v4().simple().to_string()
}

async fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Serve { config } => {
            let server = Server::bind(load(Some(&config))?).await?;
            eprintln!("listening on {}", server.local_addr()?);
            server
                .run(async {
                    let _ = tokio::signal::ctrl_c().await;
                })
                .await
        }
        Command::Seed { name, config } => {
            let svc = KnowledgeService::open(load(Some(&config))?)?;
            let summary = svc.seed_fixture(&name, Some([token(), token(), token()]))?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(())
        }
        Command::Export { out, dp, config } => {
            let svc = KnowledgeService::open(load(config.as_ref())?)?;
            let dp = dp.map(DpId::new);
            let count = svc
                .export_log(dp.as_ref(), &out)
                .with_context(|| format!("exporting to {}", out.display()))?;
            println!("{count} records written to {}", out.display());
            Ok(())
        }
        Command::CheckLog { path } => {
            let count = kcap_server::check_log(&path)?;
            println!("ok: {count} records");
            Ok(())
        }
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    match run(Cli::parse()).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

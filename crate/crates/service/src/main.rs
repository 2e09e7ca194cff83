use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use abc_service::{serve, ServiceConfig};

/// Runs the user and assistant interfaces for the gesture arm.
#[derive(Parser, Debug)]
#[command(name = "abc-service", version)]
struct Args {
    /// Service config (JSON). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    user_port: Option<u16>,
    #[arg(long)]
    assistant_port: Option<u16>,
    #[arg(long)]
    library: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let mut config = match &args.config {
        Some(path) => match ServiceConfig::load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("abc-service: {e}");
                return ExitCode::FAILURE;
            }
        },
        None => ServiceConfig::default(),
    };
    if let Some(p) = args.user_port {
        config.user_port = p;
    }
    if let Some(p) = args.assistant_port {
        config.assistant_port = p;
    }
    if let Some(lib) = args.library {
        config.library_path = lib;
    }

    match serve(config).await {
        Ok(service) => {
            service.run_until_ctrl_c().await;
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("abc-service: {e}");
            ExitCode::FAILURE
        }
    }
}

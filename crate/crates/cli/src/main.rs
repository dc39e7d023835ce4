use std::process::ExitCode;

use clap::Parser;
use xattn_cli::commands::{run, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("XATTN_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", e.code(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

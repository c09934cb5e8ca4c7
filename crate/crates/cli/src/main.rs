use std::process::ExitCode;

use clap::Parser;

use botstream_cli::{run, RunConfig};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BOTSTREAM_LOG", "info"))
        .format_timestamp(None)
        .init();
    let config = RunConfig::parse();
    match run(config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

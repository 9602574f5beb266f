use std::process::ExitCode;

use clap::Parser;

use ftpads_cli::{execute, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(
        env_logger::Env::default().filter_or("FTPADS_LOG", "warn"),
    )
    .format_timestamp(None)
    .init();

    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

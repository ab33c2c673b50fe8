mod args;
mod commands;
mod manifest;
mod util;

use clap::Parser;

use args::{Cli, Command};
use util::{exit_code, EXIT_OK, EXIT_USAGE};

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Replay(r) => commands::replay(&r.manifest, r.out),
        cmd => {
            let (resolved, config) = commands::Resolved::from_command(cmd)?;
            commands::execute(&resolved, config)
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            std::process::exit(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(exit_code(&err));
    }
}

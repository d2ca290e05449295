use clap::Parser;

use bikeshare_cli::{Cli, CliError};

fn main() {
    let cli = Cli::parse();
    if cli.flags.config.is_none() {
        let mut cmd = <Cli as clap::CommandFactory>::command();
        cmd.error(
            clap::error::ErrorKind::MissingRequiredArgument,
            "--config <PATH> is required",
        )
        .exit();
    }
    if let Err(e) = bikeshare_cli::run(cli.command, &cli.flags) {
        eprintln!("error: {e}");
        let mut src = std::error::Error::source(&e);
        while let Some(s) = src {
            eprintln!("  caused by: {s}");
            src = s.source();
        }
        std::process::exit(CliError::exit_code(&e));
    }
}

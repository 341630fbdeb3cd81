use std::process::ExitCode;

use clap::Parser;
use fingerprint_cli::error::CliError;
use fingerprint_cli::manifest::Manifest;
use fingerprint_cli::{commands, Cli};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version are success paths
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };

    let result = Manifest::load(&cli.manifest, &cli.overrides())
        .and_then(|manifest| commands::run(&manifest, cli.out_dir.clone(), &cli.cmd, cli.threads));

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fingerprint: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

// keep the error type referenced so the exit-code mapping stays in one place
const _: fn(&CliError) -> i32 = CliError::exit_code;

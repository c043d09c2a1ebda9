use std::process::ExitCode;

use clap::Parser;
use cyclicsim_cli::{execute, exit_code, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut log = String::new();
    let result = execute(&cli, &mut log);
    print!("{log}");
    if let Err(f) = &result {
        eprintln!("error: {f}");
    }
    ExitCode::from(exit_code(&result))
}

use std::process::ExitCode;

use bcl_cli::{command_line, execute, Cli};
use clap::Parser;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    match execute(&cli, command_line(&args)) {
        Ok(report) => {
            println!("{}", report.to_json());
            if !cli.global.json_only {
                eprint!("{}", report.summary());
            }
            if report.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

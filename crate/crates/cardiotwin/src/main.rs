use std::process::ExitCode;

use cardiotwin::commands::{self, Cli};
use cardiotwin::config::ConfigError;
use cardiotwin::verify::VerifyFailed;
use clap::error::ErrorKind;
use clap::Parser;

fn category(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return "config";
        }
        if cause.is::<VerifyFailed>() {
            return "verify";
        }
        if cause.is::<cardiotwin_core::Error>() {
            return "model";
        }
        if cause.is::<csv::Error>() || cause.is::<serde_json::Error>() {
            return "format";
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
    }
    "runtime"
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("error[usage]: {}", one_line(first.trim_start_matches("error: ")));
            return ExitCode::from(2);
        }
    };
    match commands::run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error[{}]: {}", category(&e), one_line(&format!("{e:#}")));
            ExitCode::FAILURE
        }
    }
}

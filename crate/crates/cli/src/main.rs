use clap::Parser;

use levy_pme_cli::commands::{execute, Cli};

fn main() {
    let arguments: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    match execute(&cli, arguments) {
        Ok(outcome) => {
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            if !cli.quiet {
                for line in &outcome.summary {
                    println!("{line}");
                }
                println!("outputs written to {}", outcome.directory.display());
            }
            if !outcome.success {
                if let Some(first) = outcome.summary.last() {
                    eprintln!("failure: {first}");
                }
            }
            std::process::exit(outcome.exit_code());
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

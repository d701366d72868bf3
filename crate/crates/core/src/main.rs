use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = foodsem::cli::Cli::parse();
    match foodsem::cli::run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            println!("{}", serde_json::json!({ "error": e.to_string() }));
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}

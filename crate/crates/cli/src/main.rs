use std::io::Write;
use std::process::ExitCode;

use clap::Parser;

use belllab_cli::{configure_threads, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = std::panic::catch_unwind(|| configure_threads().and_then(|_| run(cli)));
    match outcome {
        Ok(Ok(stdout)) => {
            if let Some(text) = stdout {
                // a closed pipe downstream is not an error of ours
                let _ = writeln!(std::io::stdout(), "{text}");
            }
            ExitCode::SUCCESS
        }
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(_) => ExitCode::from(3),
    }
}

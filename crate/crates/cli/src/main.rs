use std::process::ExitCode;

use aps_assure::{exit_code, run, Cli};
use clap::Parser;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // help and version are not errors
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let result = run(cli);
    if let Err(e) = &result {
        eprintln!("aps-assure: {e}");
    }
    exit_code(&result)
}

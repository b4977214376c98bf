use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(ergodic_hjb_cli::run_cli(std::env::args()) as u8)
}

use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(hpgn::cli::run(std::env::args()) as u8)
}

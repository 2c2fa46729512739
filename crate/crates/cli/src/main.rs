use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(spnet_cli::run(std::env::args_os()))
}

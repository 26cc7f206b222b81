use std::process::ExitCode;

fn main() -> ExitCode {
    polybranch_cli::run(std::env::args_os())
}

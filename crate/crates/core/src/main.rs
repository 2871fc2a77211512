use std::process::ExitCode;

fn main() -> ExitCode {
    raqm_lab::cli::run(std::env::args_os())
}

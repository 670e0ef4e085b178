use std::process::ExitCode;

fn main() -> ExitCode {
    gridspin_cli::run(std::env::args_os())
}

use std::process::ExitCode;

fn main() -> ExitCode {
    dcdm_cli::main_from(std::env::args_os())
}

use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(fairtab::cli::main_with_args(std::env::args_os(), &mut std::io::stdout().lock()))
}

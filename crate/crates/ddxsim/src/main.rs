use std::process::ExitCode;

fn main() -> ExitCode {
    ddxsim::cli::main()
}

use std::io;
use std::process::ExitCode;

fn main() -> ExitCode {
    let code = gamecoop_cli::main_with(std::env::args_os(), &mut io::stdout(), &mut io::stderr());
    ExitCode::from(code as u8)
}

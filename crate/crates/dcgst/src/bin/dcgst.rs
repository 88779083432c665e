use std::process::ExitCode;

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    ExitCode::from(dcgst::cli::main_from_args(&argv) as u8)
}

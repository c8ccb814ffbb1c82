use std::process::ExitCode;

fn main() -> ExitCode {
    let verbose = std::env::args().skip(1).any(|a| a == "-v" || a == "--verbose");
    env_logger::Builder::new()
        .filter_level(if verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .init();
    ExitCode::from(fsnn_cli::run_from(std::env::args_os()))
}

fn main() -> std::process::ExitCode {
    ctxplain::cli::run(std::env::args_os())
}

fn main() -> std::process::ExitCode {
    gausson::cli::run(std::env::args_os())
}

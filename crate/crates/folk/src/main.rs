fn main() -> std::process::ExitCode {
    folk::cli::main_with_args(std::env::args_os())
}

fn main() {
    std::process::exit(sqtrace::cli::main_with_args(std::env::args_os()));
}

fn main() {
    std::process::exit(xman::cli::main_with_args(std::env::args_os()));
}

fn main() {
    std::process::exit(c123::cli::main_with_args(std::env::args_os()));
}

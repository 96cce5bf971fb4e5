fn main() {
    std::process::exit(tubeverify::cli::main_with_args(std::env::args_os()));
}

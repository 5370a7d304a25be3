fn main() {
    std::process::exit(derflex::cli::main_with_args(std::env::args_os()));
}

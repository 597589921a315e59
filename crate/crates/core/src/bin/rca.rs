fn main() {
    std::process::exit(rca_core::cli::main_with_args(std::env::args_os()));
}

fn main() {
    std::process::exit(petic::cli::main_with_args(std::env::args_os()));
}

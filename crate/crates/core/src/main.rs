fn main() {
    std::process::exit(cotrack::cli::main_with_args(std::env::args_os()));
}

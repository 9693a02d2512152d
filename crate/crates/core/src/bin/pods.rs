fn main() {
    std::process::exit(pods::cli::main_with_args(std::env::args_os()));
}

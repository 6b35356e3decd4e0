fn main() {
    std::process::exit(rawfield::cli::main_with_args(std::env::args_os()));
}

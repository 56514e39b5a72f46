fn main() {
    std::process::exit(maxbloch::cli::main_with_args(std::env::args_os()));
}

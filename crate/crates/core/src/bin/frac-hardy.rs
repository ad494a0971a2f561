fn main() {
    std::process::exit(frac_hardy::cli::main_with_args(std::env::args_os()));
}

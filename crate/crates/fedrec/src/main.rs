fn main() {
    std::process::exit(fedrec::cli::main_with_args(std::env::args_os()));
}

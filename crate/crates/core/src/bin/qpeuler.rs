fn main() {
    std::process::exit(qpeuler::cli::main_with_args(std::env::args_os()));
}

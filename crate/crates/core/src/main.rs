fn main() {
    std::process::exit(accrete::cli::main_with_args(std::env::args_os()));
}

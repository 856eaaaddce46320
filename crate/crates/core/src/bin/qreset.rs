fn main() {
    std::process::exit(qreset::cli::main_with_args(std::env::args_os()));
}

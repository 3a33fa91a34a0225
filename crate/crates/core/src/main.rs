fn main() {
    std::process::exit(secure_isac::cli::main_with_args(std::env::args_os()));
}

fn main() {
    std::process::exit(graphref::cli::main_from(std::env::args_os()));
}

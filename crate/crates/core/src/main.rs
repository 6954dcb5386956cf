fn main() {
    std::process::exit(elliptic_core::cli::run(std::env::args_os()));
}

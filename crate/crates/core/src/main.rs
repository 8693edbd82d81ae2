fn main() {
    std::process::exit(glidesim::cli::run_cli(std::env::args_os()));
}

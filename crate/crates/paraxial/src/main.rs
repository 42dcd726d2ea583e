fn main() {
    std::process::exit(paraxial::cli::run_from(std::env::args_os()));
}

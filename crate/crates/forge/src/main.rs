fn main() {
    std::process::exit(cadence_forge::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(csflow::cli::run_from(std::env::args_os()));
}

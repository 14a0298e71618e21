fn main() {
    std::process::exit(perish_cli::run_from_args());
}

fn main() {
    std::process::exit(sbprune::cli::run(std::env::args_os()));
}

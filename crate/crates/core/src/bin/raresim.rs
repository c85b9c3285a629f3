fn main() {
    std::process::exit(raresim::cli::run(std::env::args_os()));
}

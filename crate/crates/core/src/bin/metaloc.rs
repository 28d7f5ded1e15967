fn main() {
    std::process::exit(metaloc::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(solv::cli::run(std::env::args_os()));
}

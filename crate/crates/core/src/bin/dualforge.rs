fn main() {
    std::process::exit(dualforge::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(fallchain::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(cogt::cli::run(std::env::args_os()));
}

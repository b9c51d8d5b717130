fn main() {
    std::process::exit(srpmoe::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(extremescore_cli::run(std::env::args_os()));
}

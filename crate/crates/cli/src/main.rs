fn main() {
    std::process::exit(kwass_cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(privmap_cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(synthkit_cli::run(std::env::args_os()));
}

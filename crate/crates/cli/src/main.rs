fn main() {
    std::process::exit(surrogate_cli::run(std::env::args_os()));
}

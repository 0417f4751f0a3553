fn main() {
    std::process::exit(bundlenas_cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(proxyprints::cli::run(std::env::args_os()));
}

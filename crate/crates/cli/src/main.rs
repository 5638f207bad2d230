fn main() {
    std::process::exit(spn_cli::run(std::env::args().collect()));
}

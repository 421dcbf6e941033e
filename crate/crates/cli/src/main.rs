fn main() {
    std::process::exit(nslx_cli::run(std::env::args().skip(1)));
}

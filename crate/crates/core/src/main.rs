fn main() {
    std::process::exit(geokernel::cli::run(std::env::args().collect()));
}

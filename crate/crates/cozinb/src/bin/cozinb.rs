fn main() {
    std::process::exit(cozinb::cli::run());
}

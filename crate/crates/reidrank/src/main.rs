fn main() {
    std::process::exit(reidrank::cli::run());
}

fn main() {
    std::process::exit(sepkrig::cli::run());
}

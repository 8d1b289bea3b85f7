fn main() {
    std::process::exit(copback::cli::run());
}

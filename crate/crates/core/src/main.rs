fn main() {
    std::process::exit(gbcheck::cli::main());
}

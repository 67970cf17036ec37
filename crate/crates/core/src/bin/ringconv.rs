fn main() {
    std::process::exit(ringconv::cli::main());
}

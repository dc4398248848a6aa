fn main() {
    std::process::exit(storyreel::cli::main());
}

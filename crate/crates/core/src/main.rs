fn main() {
    std::process::exit(owtrack::cli::main());
}

fn main() {
    std::process::exit(becsim::cli::main());
}

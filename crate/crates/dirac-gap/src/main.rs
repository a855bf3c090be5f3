fn main() {
    std::process::exit(dirac_gap::cli::run());
}

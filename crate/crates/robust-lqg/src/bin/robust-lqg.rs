fn main() {
    std::process::exit(robust_lqg::cli::main());
}

fn main() {
    std::process::exit(ccmpc::cli::main());
}

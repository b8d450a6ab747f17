fn main() {
    std::process::exit(maker_core::harness::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(igloo_harness::cli::run(std::env::args_os()));
}

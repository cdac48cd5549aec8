fn main() {
    std::process::exit(ctm::cli::run(std::env::args_os()));
}

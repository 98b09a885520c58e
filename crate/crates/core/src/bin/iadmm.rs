fn main() {
    std::process::exit(iadmm::cli::run(std::env::args_os()));
}

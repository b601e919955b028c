fn main() {
    std::process::exit(dpkl::cli::run(std::env::args_os()));
}

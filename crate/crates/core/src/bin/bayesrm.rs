fn main() {
    std::process::exit(bayesrm::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(gplan::cli::run(std::env::args_os()));
}

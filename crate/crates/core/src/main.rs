fn main() {
    std::process::exit(ordq::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(spae::cli::run(std::env::args_os()));
}

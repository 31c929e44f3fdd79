fn main() {
    std::process::exit(lingrow::cli::run(std::env::args_os()));
}

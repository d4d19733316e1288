fn main() {
    std::process::exit(espn::cli::run(std::env::args_os()));
}

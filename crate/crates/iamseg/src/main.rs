fn main() {
    std::process::exit(iamseg::cli::run(std::env::args_os()));
}

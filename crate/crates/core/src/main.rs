fn main() {
    std::process::exit(ulu_kit::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(fredholm_core::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(erw_core::cli::run(std::env::args_os()));
}

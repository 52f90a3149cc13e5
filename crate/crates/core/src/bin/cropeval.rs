fn main() {
    std::process::exit(cropeval::cli::run_from(std::env::args_os()));
}

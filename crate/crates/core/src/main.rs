fn main() {
    std::process::exit(pamkit::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(rdvc::cli::run(std::env::args_os()));
}

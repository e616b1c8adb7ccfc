fn main() {
    std::process::exit(steincv::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(echolab::cli::run(std::env::args_os()));
}

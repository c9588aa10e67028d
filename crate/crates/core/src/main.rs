fn main() {
    std::process::exit(open_sslac::cli::run(std::env::args_os()));
}

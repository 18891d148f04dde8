fn main() {
    std::process::exit(synctrack::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(trecon::cli::run(std::env::args_os()));
}

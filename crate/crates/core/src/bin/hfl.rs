fn main() {
    std::process::exit(hyperfit::cli::dispatch(std::env::args_os()));
}

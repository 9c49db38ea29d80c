fn main() {
    std::process::exit(freeway_congestion::cli::main_with_args(std::env::args_os()));
}

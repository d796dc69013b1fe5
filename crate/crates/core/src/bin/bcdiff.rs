fn main() {
    std::process::exit(bcdiff::cli::run(std::env::args_os()));
}

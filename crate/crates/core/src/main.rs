fn main() {
    std::process::exit(skyset::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(gradex::cli::run(std::env::args_os()));
}

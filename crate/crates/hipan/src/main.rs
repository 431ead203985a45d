fn main() {
    std::process::exit(hipan::cli::run(std::env::args_os()));
}

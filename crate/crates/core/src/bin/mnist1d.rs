fn main() {
    std::process::exit(mnist1d::cli::main_from(std::env::args_os()));
}

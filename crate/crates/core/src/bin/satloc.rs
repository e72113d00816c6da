fn main() {
    std::process::exit(satloc::cli::run(std::env::args_os()));
}

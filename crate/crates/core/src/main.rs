fn main() {
    std::process::exit(modif::cli::run(std::env::args_os()));
}

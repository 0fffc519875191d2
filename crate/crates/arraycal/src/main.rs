fn main() {
    std::process::exit(arraycal::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(saod::cli::run(std::env::args_os()));
}

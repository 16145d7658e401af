fn main() {
    std::process::exit(sparsemud::cli::run(std::env::args_os()));
}

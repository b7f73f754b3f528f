fn main() {
    std::process::exit(milne_bl::cli::main_with_args(std::env::args_os()));
}

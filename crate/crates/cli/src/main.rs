fn main() {
    std::process::exit(pmlm_cli::main_with(std::env::args_os()));
}

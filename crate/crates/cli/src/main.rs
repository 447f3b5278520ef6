fn main() {
    std::process::exit(olap_cli::main_with_args(std::env::args_os()));
}

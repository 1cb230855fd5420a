fn main() {
    std::process::exit(vnfactor::cli::main_with_args(std::env::args_os()));
}

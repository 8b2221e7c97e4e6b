fn main() {
    std::process::exit(seglm_cli::main_with_args(std::env::args_os()));
}

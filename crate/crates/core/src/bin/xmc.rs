fn main() {
    std::process::exit(xmodal_curriculum::cli::main_with_args(std::env::args_os()));
}

fn main() {
    std::process::exit(spinphoto::cli::main_with_args(std::env::args_os()));
}

fn main() {
    std::process::exit(mflq::cli::main_with_args(std::env::args_os()));
}

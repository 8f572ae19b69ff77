fn main() {
    std::process::exit(mbtfit::cli::main_with_args(std::env::args_os()));
}

fn main() {
    std::process::exit(rmd_core::cli::main_with_args(std::env::args_os()));
}

fn main() {
    std::process::exit(mgn_halo::cli::main_with_args(std::env::args_os()));
}

fn main() {
    std::process::exit(mirror_sd::cli::main_with(std::env::args_os()));
}

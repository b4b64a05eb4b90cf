fn main() {
    std::process::exit(pcm::cli::main_with_args(std::env::args_os()));
}

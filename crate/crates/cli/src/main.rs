fn main() {
    std::process::exit(srlab_cli::run(std::env::args_os()));
}

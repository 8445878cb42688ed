fn main() {
    std::process::exit(fusion_cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(srd_cli::run(std::env::args_os()));
}

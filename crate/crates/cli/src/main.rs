fn main() {
    std::process::exit(uco_cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(teleop_cli::run(std::env::args_os()));
}

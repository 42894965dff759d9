fn main() {
    std::process::exit(seafield_cli::main_with(std::env::args_os()));
}

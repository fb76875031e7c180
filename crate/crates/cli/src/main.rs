fn main() {
    std::process::exit(nvel_cli::main_with(std::env::args_os()));
}

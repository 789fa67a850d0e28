fn main() {
    std::process::exit(gfpic_cli::run_command(std::env::args_os()));
}

fn main() {
    std::process::exit(privloc_cli::run(std::env::args_os()));
}

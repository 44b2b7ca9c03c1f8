fn main() {
    std::process::exit(recurrent_cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(etsmc::cli::run_cli(std::env::args_os()));
}

fn main() {
    std::process::exit(lsdebm_cli::run_args(std::env::args_os()));
}

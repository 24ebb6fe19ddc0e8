fn main() {
    std::process::exit(divkern_cli::run_from_args(std::env::args_os()));
}

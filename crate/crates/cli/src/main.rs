fn main() {
    std::process::exit(ctxsched_cli::run(std::env::args_os()));
}

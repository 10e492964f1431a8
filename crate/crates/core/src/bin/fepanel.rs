fn main() {
    std::process::exit(fepanel::cli::dispatch(std::env::args_os()));
}

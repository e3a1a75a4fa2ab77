fn main() {
    std::process::exit(colordot::cli::run(std::env::args_os()));
}

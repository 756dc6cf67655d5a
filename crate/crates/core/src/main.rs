fn main() {
    std::process::exit(mcclt::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(lvg::run(std::env::args_os()));
}

fn main() {
    std::process::exit(refgov::harness::cli(std::env::args_os()));
}

fn main() {
    std::process::exit(cdstraj::eval::cli_main());
}

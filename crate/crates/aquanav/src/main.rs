fn main() {
    std::process::exit(aquanav::cli_main());
}

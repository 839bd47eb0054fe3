fn main() {
    std::process::exit(acgnet::cli::cli_run(std::env::args()));
}

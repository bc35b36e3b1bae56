fn main() {
    std::process::exit(mwi::cli::cli_main(std::env::args()));
}

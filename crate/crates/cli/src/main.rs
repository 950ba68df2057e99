fn main() {
    std::process::exit(pdistill_cli::cli_main(std::env::args_os()));
}

fn main() {
    std::process::exit(mfg_cli::cli_main(std::env::args_os()));
}

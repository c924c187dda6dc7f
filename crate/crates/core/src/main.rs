fn main() {
    std::process::exit(pir_sim::cli::run_cli(std::env::args_os()));
}

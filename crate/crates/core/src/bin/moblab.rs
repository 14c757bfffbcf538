fn main() {
    std::process::exit(moblab::cli::run_cli());
}

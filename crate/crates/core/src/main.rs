fn main() {
    std::process::exit(medreport::cli::run(std::env::args_os()));
}

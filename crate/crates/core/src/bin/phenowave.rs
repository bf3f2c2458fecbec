fn main() {
    std::process::exit(phenowave::cli::dispatch(std::env::args_os()));
}

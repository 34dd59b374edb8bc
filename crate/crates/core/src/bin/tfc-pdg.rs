fn main() {
    std::process::exit(tfc_pdg::cli::run(std::env::args_os()));
}

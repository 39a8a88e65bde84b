fn main() {
    std::process::exit(hgnn_core::cli::run());
}

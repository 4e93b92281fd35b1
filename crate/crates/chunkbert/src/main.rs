fn main() {
    std::process::exit(chunkbert::cli::run());
}

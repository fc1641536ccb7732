fn main() {
    relume::cli::run();
}

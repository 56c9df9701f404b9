fn main() {
    glimpse::cli::placeholder();
}

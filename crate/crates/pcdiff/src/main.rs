fn main() {
    std::process::exit(pcdiff::run());
}

fn main() {
    std::process::exit(ibg::run());
}

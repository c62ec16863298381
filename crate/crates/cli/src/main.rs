fn main() {
    std::process::exit(latentmorph::run());
}

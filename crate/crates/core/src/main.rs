fn main() {
    std::process::exit(stdml::cli::run());
}

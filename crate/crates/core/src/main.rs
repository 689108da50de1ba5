fn main() {
    std::process::exit(cloud_layers::cli::run(std::env::args_os()));
}

fn main() {
    env_logger::init();
    std::process::exit(desclip::cli::run(std::env::args_os()));
}

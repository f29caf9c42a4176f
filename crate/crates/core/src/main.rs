use env_logger::Env;

fn main() {
    env_logger::Builder::from_env(Env::new().filter_or("KNOBFORGE_LOG", "error")).init();
    std::process::exit(knobforge::cli::run(std::env::args_os()));
}

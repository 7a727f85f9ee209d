use env_logger::Env;

fn main() {
    env_logger::Builder::from_env(Env::default().default_filter_or("info")).init();
    std::process::exit(dpnn::cli::run_from_args(std::env::args_os()));
}

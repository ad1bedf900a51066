use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    std::process::exit(dynobj::cli::execute(dynobj::cli::Cli::parse()));
}

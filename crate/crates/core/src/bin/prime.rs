use clap::Parser;
use prime_core::cli::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let invocation: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    std::process::exit(run(cli, &invocation));
}

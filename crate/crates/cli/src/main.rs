use clap::Parser;
use gesture_relay_cli::cli::Cli;

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    gesture_relay_cli::commands::run(Cli::parse())
}

use clap::Parser;
use trivio::cli::{init_logging, main_with, Cli};

fn main() {
    init_logging();
    let cli = Cli::parse();
    std::process::exit(main_with(&cli));
}

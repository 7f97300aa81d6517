use clap::Parser;
use objcomp_cli::{commands, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = commands::dispatch(&cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

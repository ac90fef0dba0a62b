use clap::Parser;
use sosroa::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}

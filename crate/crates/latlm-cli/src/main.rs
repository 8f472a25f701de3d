mod commands;
mod config;
mod errors;
mod opts;

use clap::Parser;

fn main() {
    let cli = opts::Cli::parse();
    if let Err(err) = commands::dispatch(cli) {
        eprintln!("{}", err.one_line());
        std::process::exit(err.code());
    }
}

use clap::Parser;
use voltshm_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("voltshm: error: {e}");
        std::process::exit(e.exit_code());
    }
}

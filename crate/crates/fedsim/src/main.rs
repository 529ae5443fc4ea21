use clap::Parser;

use fedsim::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("fedsim: {err}");
        std::process::exit(err.exit_code());
    }
}

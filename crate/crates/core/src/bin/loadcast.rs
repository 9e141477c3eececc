use clap::Parser;

use loadcast::cli::{run, Cli};
use loadcast::error::ErrorKind;

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        let code = match e.kind() {
            ErrorKind::Config => 1,
            ErrorKind::Data => 2,
            ErrorKind::Runtime => 3,
        };
        std::process::exit(code);
    }
}

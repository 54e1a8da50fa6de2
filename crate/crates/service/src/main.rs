use clap::Parser;

fn main() {
    let cli = weldqa::cli::Cli::parse();
    if let Err(e) = weldqa::cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

use clap::Parser;

fn main() {
    let cli = banditry_server::cli::Cli::parse();
    if let Err(e) = banditry_server::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

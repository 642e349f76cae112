use clap::Parser;

fn main() {
    let cli = camforge_cli::Cli::parse();
    if let Err(e) = camforge_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

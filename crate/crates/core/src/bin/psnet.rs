use clap::Parser;

fn main() {
    let cli = psnet::cli::Cli::parse();
    std::process::exit(psnet::cli::run(cli));
}

use clap::Parser;

fn main() {
    let cli = mvf_cli::Cli::parse();
    std::process::exit(mvf_cli::run(cli));
}

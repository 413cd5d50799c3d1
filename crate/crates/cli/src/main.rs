use clap::Parser;

fn main() {
    let cli = wishart_lab::Cli::parse();
    std::process::exit(wishart_lab::run(&cli));
}

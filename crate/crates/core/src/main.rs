use clap::Parser;

fn main() {
    let cli = ofd_core::cli::Cli::parse();
    std::process::exit(ofd_core::cli::run(cli));
}

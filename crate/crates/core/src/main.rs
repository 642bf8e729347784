use clap::Parser;

fn main() {
    std::process::exit(vaemm::cli::execute(vaemm::cli::Cli::parse()));
}

use clap::Parser;

fn main() {
    let cli = blockade_cli::Cli::parse();
    std::process::exit(blockade_cli::main_with(cli));
}

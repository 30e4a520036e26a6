use clap::Parser;

fn main() {
    let cli = accap::cli::Cli::parse();
    if let Err(err) = accap::cli::run(cli) {
        eprintln!("error: {err}");
        std::process::exit(1);
    }
}

use clap::Parser;

fn main() {
    let cli = ger_core::cli::Cli::parse();
    match ger_core::cli::execute(cli) {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(2);
        }
    }
}

use clap::Parser;

fn main() {
    let cli = boxtip_cli::Cli::parse();
    match boxtip_cli::run(&cli) {
        Ok(out) => eprintln!("artifacts in {}", out.display()),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}

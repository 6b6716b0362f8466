use apibench_cli::{run, Cli, CliError};
use clap::Parser;

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", CliError::new("usage", first).line());
            std::process::exit(2);
        }
    };
    let level = cli.log.as_deref().unwrap_or("info").parse().unwrap_or(tracing::Level::INFO);
    tracing_subscriber::fmt().with_max_level(level).with_writer(std::io::stderr).init();
    if let Err(e) = run(cli) {
        eprintln!("{}", e.line());
        std::process::exit(e.code);
    }
}

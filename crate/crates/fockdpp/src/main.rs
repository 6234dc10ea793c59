use std::process::ExitCode;

use clap::Parser;
use fockdpp::{run, Command, Experiment, ExperimentConfig, Flags};

#[derive(Parser)]
#[command(name = "fockdpp", version, about = "Separation experiments for Fock-space determinantal point processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = ExperimentConfig::resolve(&cli.flags).and_then(Experiment::new).and_then(|exp| run(cli.command, &exp));
    match result {
        Ok(out) => {
            println!("{}", out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("fockdpp {}: {e}", cli.command.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use clap::Parser;
use pfgmm_cli::{execute, Cli};

fn main() {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(outcome) => {
            let m = &outcome.manifest;
            for f in &m.outputs {
                println!("{}", m.config.output.join(f).display());
            }
            eprintln!("{} finished in {:.1} s", m.mode, m.wall_time_seconds);
            if let Some(err) = outcome.failure {
                eprintln!("error: {err}");
                std::process::exit(err.exit_code());
            }
        }
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(err.exit_code());
        }
    }
}

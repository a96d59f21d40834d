use std::path::PathBuf;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "sde-equiv", about = "Runs simulation suites for small-noise diffusion experiments", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the suites requested by a config file and write CSV tables
    /// plus a summary report.
    Run {
        /// TOML config with [model] and [run] sections
        config: PathBuf,
        /// dotted-key overrides, e.g. --set model.epsilon=0.05
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// where to write rates.csv, suites.csv, report.txt
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// worker threads (default: SDE_EQUIV_THREADS or all cores)
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config, set, output_dir, threads } => {
            let threads = threads.or_else(|| {
                std::env::var("SDE_EQUIV_THREADS").ok().and_then(|v| v.parse().ok())
            });
            if let Some(k) = threads {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
                    eprintln!("thread pool setup failed: {e}");
                    std::process::exit(2);
                }
            }
            sde_equiv::harness::run(&config, &set, output_dir.as_deref())
        }
    };
    std::process::exit(code);
}

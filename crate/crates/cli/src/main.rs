use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use csm_cli::{execute, parse_config_file, resolve_out_dir, RunOptions, OUT_DIR_ENV};

/// Run channel-access experiments and write per-super-frame metrics as CSV.
#[derive(Debug, Parser)]
#[command(name = "csm-sim", version)]
struct Args {
    /// Experiment file (TOML)
    config: PathBuf,

    /// Override the base seed
    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads; 0 uses every available core
    #[arg(long, default_value_t = 0)]
    workers: usize,

    /// Output directory; takes precedence over the file and the environment
    #[arg(long)]
    out_dir: Option<PathBuf>,

    /// Run every cell of the [sweep] table
    #[arg(long)]
    sweep: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let spec = match parse_config_file(&args.config) {
        Ok(spec) => spec,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let env = std::env::var(OUT_DIR_ENV).ok();
    let out_dir = resolve_out_dir(args.out_dir.as_deref(), env.as_deref(), &spec);
    let options = RunOptions {
        seed: args.seed,
        workers: args.workers,
        sweep: args.sweep,
    };
    match execute(&spec, &options, &out_dir) {
        Ok(summaries) => {
            for s in summaries {
                println!(
                    "K={} N={} runs={} final_norm_reward={:.4} final_in_smc={:.2} final_potential={:.2}",
                    s.cell.channels,
                    s.cell.users,
                    s.runs,
                    s.mean_final_norm_reward,
                    s.frac_final_in_smc,
                    s.mean_final_potential
                );
            }
            println!("wrote {}", out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mrpd_cli::commands;
use mrpd_cli::{CliError, Overrides, RunManifest};

#[derive(Parser)]
#[command(name = "mrpd", version, about = "Latent diffusion reconstruction of undersampled k-space")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Phantom, mask and measurement.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        coils: Option<usize>,
    },
    /// Magnitude reconstruction from a measurement.
    Reconstruct {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        coils: Option<usize>,
        /// hard_to_soft, hard_only or soft_only.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Refit the boundary layers of a patch codec.
    FinetuneAdapter {
        #[command(flatten)]
        run: RunArgs,
    },
    /// λ sweep, guidance-mode comparison and Pareto sweep.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Check FLD files.
    Validate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

fn report(m: RunManifest) {
    for (k, v) in &m.metrics {
        println!("{k} = {v}");
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let ov = |seed, coils, mode| Overrides { seed, coils, mode };
    let result: Result<(), CliError> = match cli.command {
        Command::Simulate { run, coils } => commands::simulate(&run.config, &run.out, &ov(run.seed, coils, None)).map(report),
        Command::Reconstruct { run, coils, mode } => {
            commands::reconstruct_cmd(&run.config, &run.out, &ov(run.seed, coils, mode)).map(report)
        }
        Command::FinetuneAdapter { run } => {
            commands::finetune_adapter(&run.config, &run.out, &ov(run.seed, None, None)).map(report)
        }
        Command::Ablate { run } => commands::ablate(&run.config, &run.out, &ov(run.seed, None, None)).map(report),
        Command::Validate { files } => {
            let mut first_err = None;
            for r in commands::validate(&files) {
                let kind = r.kind.as_deref().unwrap_or("?");
                match r.result {
                    Ok(()) => println!("ok      {} ({kind})", r.path.display()),
                    Err(e) => {
                        println!("invalid {} ({kind}): {e}", r.path.display());
                        first_err.get_or_insert(e);
                    }
                }
            }
            first_err.map_or(Ok(()), Err)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

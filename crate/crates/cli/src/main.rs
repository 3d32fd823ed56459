use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hbf_cli::{ExperimentConfig, Harness, HarnessError};

#[derive(Parser)]
#[command(name = "hbf", version, about = "Learned hybrid beamforming experiments")]
struct Cli {
    /// Experiment configuration (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overrides `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dataset seed, overrides `dataset.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate the channel dataset.
    Gen,
    /// Train the unfolded schedules and tune the PGA step.
    Train,
    /// Mean rate versus SNR for every method.
    Sweep,
    /// Mean rate per iteration.
    Convergence,
    /// Mean true rate under imperfect CSI.
    Robust,
    /// gen, train, sweep, convergence and robust in sequence.
    All,
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.output_dir = out.display().to_string();
    }
    if let Some(seed) = cli.seed {
        cfg.dataset.seed = seed;
    }
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    }
    let h = Harness::new(cfg)?;
    let out = h.out_dir();
    let steps: &[Command] = match cli.command {
        Command::All => &[Command::Gen, Command::Train, Command::Sweep, Command::Convergence, Command::Robust],
        ref c => std::slice::from_ref(c),
    };
    for step in steps {
        match step {
            Command::Gen => {
                let fp = h.gen()?;
                println!("dataset {} ({})", h.config.dataset_path().display(), &fp[..16]);
            }
            Command::Train => {
                for id in h.train()? {
                    println!("trained {id}");
                }
            }
            Command::Sweep => {
                for r in h.sweep()?.0 {
                    println!("{:>16} {:>6} dB  {:.4} bit/s/Hz", r.method, r.snr_db, r.mean_rate);
                }
            }
            Command::Convergence => {
                h.convergence()?;
                println!("wrote {}", out.join("convergence.csv").display());
            }
            Command::Robust => {
                for r in h.robust()? {
                    println!("{:>20} var {:<5} {:.4}", r.method, r.error_var, r.mean_true_rate);
                }
            }
            Command::All => unreachable!(),
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

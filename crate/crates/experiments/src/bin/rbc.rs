use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rbc_core::dataset::read_episode;
use rbc_experiments::compare::{cmd_compare, default_lran_config, read_config};
use rbc_experiments::render::render_field;
use rbc_experiments::simulate::{cmd_simulate, summary_table, SimulateOptions};
use rbc_experiments::sweep::{cmd_sweep_kdmd, cmd_sweep_lran, rank_sigmas, KdmdConfig, LranSweepOptions};

#[derive(Parser)]
#[command(name = "rbc", about = "Rayleigh-Benard flux prediction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Kdmd,
    Lran,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate episodes and write `ra<RA>_ep<k>.rbce` files.
    Simulate {
        #[arg(long)]
        ra: f64,
        #[arg(long, default_value_t = 5)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 48)]
        nx: usize,
        #[arg(long, default_value_t = 32)]
        ny: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// KDMD grid sweep or LRAN random sweep.
    Sweep {
        method: Method,
        #[arg(long)]
        ra: f64,
        #[arg(long)]
        data: PathBuf,
        /// Number of LRAN configurations to sample.
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// LRAN convolution widths, e.g. 32,64,32,32 for the full network.
        #[arg(long, value_delimiter = ',', default_values_t = [4, 8, 4, 4])]
        channels: Vec<usize>,
        #[arg(long, default_value_t = 50)]
        max_epochs: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate both methods with fixed configs on every episode.
    Compare {
        #[arg(long)]
        ra: f64,
        #[arg(long)]
        data: PathBuf,
        /// JSON with KernelSpec fields plus `snapshot_size`.
        #[arg(long)]
        kdmd_config: Option<PathBuf>,
        /// JSON with LranConfig fields.
        #[arg(long)]
        lran_config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render one snapshot of an episode as a PGM image.
    Render {
        #[arg(long)]
        episode: PathBuf,
        #[arg(long)]
        index: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate {
            ra,
            episodes,
            seed,
            nx,
            ny,
            out,
        } => {
            let opts = SimulateOptions {
                ra,
                episodes,
                seed,
                nx,
                ny,
            };
            let outcomes = cmd_simulate(&opts, &out)?;
            print!("{}", summary_table(&outcomes));
            let failed: Vec<_> = outcomes.iter().filter(|o| o.result.is_err()).map(|o| o.index).collect();
            if !failed.is_empty() {
                eprintln!("failed episodes: {failed:?}");
                return Ok(ExitCode::from(2));
            }
        }
        Command::Sweep {
            method,
            ra,
            data,
            runs,
            seed,
            channels,
            max_epochs,
            out,
        } => {
            let failed = match method {
                Method::Kdmd => {
                    let rows = cmd_sweep_kdmd(&data, ra, &out)?;
                    for (sigma, mean) in rank_sigmas(&rows) {
                        println!("sigma {sigma}: mean NSSE {mean:.4e}");
                    }
                    rows.iter().filter(|r| r.scores.failed()).count()
                }
                Method::Lran => {
                    let channels: [usize; 4] = channels
                        .try_into()
                        .map_err(|c: Vec<usize>| anyhow::anyhow!("expected 4 channel widths, got {}", c.len()))?;
                    let opts = LranSweepOptions {
                        runs,
                        seed,
                        channels,
                        max_epochs,
                    };
                    let rows = cmd_sweep_lran(&data, ra, &opts, &out)?;
                    rows.iter().filter(|r| r.scores.failed()).count()
                }
            };
            println!("wrote {}", out.display());
            if failed > 0 {
                eprintln!("{failed} configurations failed; see the status column");
                return Ok(ExitCode::from(2));
            }
        }
        Command::Compare {
            ra,
            data,
            kdmd_config,
            lran_config,
            out,
        } => {
            let kdmd: KdmdConfig = match &kdmd_config {
                Some(p) => read_config(p)?,
                None => KdmdConfig::default(),
            };
            let lran = match &lran_config {
                Some(p) => read_config(p)?,
                None => default_lran_config(ra),
            };
            let result = cmd_compare(&data, ra, &kdmd, &lran, &out)?;
            println!("wrote {}", result.nsse_csv.display());
            let failures = result.failures();
            if !failures.is_empty() {
                for f in &failures {
                    eprintln!("{f}");
                }
                return Ok(ExitCode::from(2));
            }
        }
        Command::Render { episode, index, out } => {
            let ep = read_episode::<f64>(&episode).with_context(|| format!("reading {}", episode.display()))?;
            anyhow::ensure!(index < ep.len(), "index {index} out of range (episode has {} snapshots)", ep.len());
            render_field(ep.snapshot(index), &out)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

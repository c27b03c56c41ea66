use std::path::{Path, PathBuf};

use rayon::prelude::*;
use rbc_core::dataset::{nusselt_default, write_episode};
use rbc_core::dns::{simulate_episode, SimulationConfig};
use rbc_core::Grid;

use crate::{episode_file_name, ExperimentError};

#[derive(Clone, Debug)]
pub struct SimulateOptions {
    pub ra: f64,
    pub episodes: usize,
    pub seed: u64,
    pub nx: usize,
    pub ny: usize,
}

impl SimulateOptions {
    /// Desk scale: 48 × 32 grid, five episodes.
    pub fn desk(ra: f64, seed: u64) -> Self {
        Self {
            ra,
            episodes: 5,
            seed,
            nx: 48,
            ny: 32,
        }
    }

    pub fn config(&self, index: usize) -> Result<SimulationConfig, ExperimentError> {
        let grid = Grid::new(self.nx, self.ny).map_err(|e| ExperimentError::Invalid(e.to_string()))?;
        Ok(SimulationConfig::new(self.ra, grid).with_seed(self.seed.wrapping_add(index as u64)))
    }
}

#[derive(Clone, Debug)]
pub struct EpisodeOutcome {
    pub index: usize,
    pub seed: u64,
    pub path: PathBuf,
    /// Snapshot count and Nusselt number of the last snapshot, or the error.
    pub result: Result<(usize, f64), String>,
}

/// Simulates and writes every episode. A failing episode (for example a
/// solver blowup) is reported in its outcome and does not stop the batch.
pub fn cmd_simulate(opts: &SimulateOptions, out_dir: &Path) -> Result<Vec<EpisodeOutcome>, ExperimentError> {
    std::fs::create_dir_all(out_dir)?;
    // Validate up front so a bad grid is a hard error, not N failures.
    opts.config(0)?.validate()?;
    let outcomes = (0..opts.episodes)
        .into_par_iter()
        .map(|k| {
            let path = out_dir.join(episode_file_name(opts.ra, k));
            let cfg = opts.config(k);
            let seed = opts.seed.wrapping_add(k as u64);
            let result = cfg
                .and_then(|cfg| {
                    let ep = simulate_episode::<f64>(&cfg)?;
                    write_episode(&ep, &path)?;
                    let nu = ep
                        .snapshots()
                        .last()
                        .map_or(f64::NAN, |q| nusselt_default(q, cfg.ra, cfg.pr));
                    Ok((ep.len(), nu))
                })
                .map_err(|e: ExperimentError| e.to_string());
            EpisodeOutcome {
                index: k,
                seed,
                path,
                result,
            }
        })
        .collect();
    Ok(outcomes)
}

pub fn summary_table(outcomes: &[EpisodeOutcome]) -> String {
    let mut out = format!("{:>7} {:>20} {:>9} {:>10}  file\n", "episode", "seed", "snapshots", "Nu(end)");
    for o in outcomes {
        let name = o.path.file_name().and_then(|n| n.to_str()).unwrap_or("?");
        match &o.result {
            Ok((n, nu)) => out += &format!("{:>7} {:>20} {:>9} {:>10.4}  {name}\n", o.index, o.seed, n, nu),
            Err(e) => out += &format!("{:>7} {:>20} {:>9} {:>10}  FAILED: {e}\n", o.index, o.seed, "-", "-"),
        }
    }
    out
}

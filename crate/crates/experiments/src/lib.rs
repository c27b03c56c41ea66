//! Experiment harness: simulate episodes, sweep KDMD and LRAN
//! hyperparameters, compare both methods and render fields.

use std::path::{Path, PathBuf};

use rbc_core::dataset::{read_episode, DatasetError};
use rbc_core::dns::DnsError;
use rbc_core::kdmd::KdmdError;
use rbc_core::Episode;
use rbc_lran::LranError;
use thiserror::Error;

pub mod compare;
pub mod render;
pub mod simulate;
pub mod sweep;

/// Length of the prediction window scored by every experiment.
pub const TEST_LENGTH: usize = 30;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("no episodes for Ra = {ra} in {dir}")]
    NoEpisodes { ra: f64, dir: PathBuf },
    #[error("missing config file {0}")]
    MissingConfig(PathBuf),
    #[error("invalid config {path}: {source}")]
    BadConfig {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Dns(#[from] DnsError),
    #[error(transparent)]
    Kdmd(#[from] KdmdError),
    #[error(transparent)]
    Lran(#[from] LranError),
}

/// Compact file-name tag for a Rayleigh number: `1e5`, `2.5e6`, `1e3`.
pub fn ra_tag(ra: f64) -> String {
    format!("{ra:e}")
}

pub fn episode_file_name(ra: f64, index: usize) -> String {
    format!("ra{}_ep{index}.rbce", ra_tag(ra))
}

/// Episodes `ra<RA>_ep<k>.rbce` in `dir`, ordered by `k`.
pub fn episode_paths(dir: &Path, ra: f64) -> Result<Vec<(usize, PathBuf)>, ExperimentError> {
    let prefix = format!("ra{}_ep", ra_tag(ra));
    let mut found = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(k) = name
            .strip_prefix(&prefix)
            .and_then(|rest| rest.strip_suffix(".rbce"))
            .and_then(|k| k.parse::<usize>().ok())
        {
            found.push((k, path));
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(ExperimentError::NoEpisodes {
            ra,
            dir: dir.to_path_buf(),
        });
    }
    Ok(found)
}

pub fn load_episodes(dir: &Path, ra: f64) -> Result<Vec<(usize, Episode)>, ExperimentError> {
    episode_paths(dir, ra)?
        .into_iter()
        .map(|(k, p)| Ok((k, read_episode::<f64>(&p)?)))
        .collect()
}

/// Arithmetic mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

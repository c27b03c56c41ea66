//! KDMD grid sweep and LRAN random sweep.
//!
//! Rows are computed in parallel but always emitted in a fixed order, so a
//! CSV depends only on the data, the configs and the seed. Wall time goes
//! to a separate `*.timing.csv` for the same reason.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rbc_core::dataset::{nsse, test_window, SplitSpec};
use rbc_core::kdmd::{fit_fields, KernelSpec};
use rbc_core::Episode;
use rbc_lran::LranConfig;
use serde::{Deserialize, Serialize};

use crate::{ExperimentError, TEST_LENGTH};

pub const SIGMAS: [f64; 4] = [1.0, 2.0, 4.0, 6.0];
pub const SNAPSHOT_SIZES: [usize; 8] = [5, 10, 30, 40, 60, 80, 100, 150];

pub const LATENT_RANGE: (usize, usize) = (16, 1024);
pub const DELTA_RANGE: (f64, f64) = (0.9, 1.0);
pub const BETA_MAX: f64 = 10.0;
/// Lower end of the log-uniform part of the β distribution.
pub const BETA_LOG_MIN: f64 = 1e-3;
/// Probability of sampling β = 0 exactly.
pub const BETA_ZERO_PROB: f64 = 0.25;
pub const SEQUENCE_RANGE: (usize, usize) = (2, 30);
pub const LEARNING_RATES: [f64; 2] = [1e-4, 1e-5];
pub const EPISODE_INDICES: usize = 5;

fn default_trunc_tol() -> f64 {
    1e-10
}

/// Kernel plus snapshot count; the JSON form flattens the kernel fields.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KdmdConfig {
    #[serde(flatten)]
    pub kernel: KernelSpec,
    pub snapshot_size: usize,
    #[serde(default = "default_trunc_tol")]
    pub trunc_tol: f64,
}

impl Default for KdmdConfig {
    fn default() -> Self {
        Self {
            kernel: KernelSpec::gaussian(2.0),
            snapshot_size: 60,
            trunc_tol: default_trunc_tol(),
        }
    }
}

/// 30-step test NSSE of KDMD fitted on the last `snapshot_size` training
/// snapshots and started from the last one.
pub fn kdmd_episode_nsse(episode: &Episode, config: &KdmdConfig, split: &SplitSpec) -> Result<Vec<f64>, ExperimentError> {
    Ok(kdmd_episode_predict(episode, config, split)?.0)
}

pub(crate) fn kdmd_episode_predict(
    episode: &Episode,
    config: &KdmdConfig,
    split: &SplitSpec,
) -> Result<(Vec<f64>, Vec<rbc_core::Field>), ExperimentError> {
    let window = test_window(episode, split)?;
    let m = config.snapshot_size;
    if m < 2 || m > split.train_end {
        return Err(ExperimentError::Invalid(format!(
            "snapshot size {m} outside 2..={}",
            split.train_end
        )));
    }
    let snaps = &episode.snapshots()[split.train_end - m..split.train_end];
    let model = fit_fields(snaps, &config.kernel, config.trunc_tol)?;
    let preds = model.predict_fields(&window.entry, split.test_length)?;
    let errs = preds
        .iter()
        .zip(&window.targets)
        .map(|(p, t)| nsse(t, p))
        .collect::<Result<_, _>>()?;
    Ok((errs, preds))
}

pub fn test_split() -> SplitSpec {
    SplitSpec {
        train_end: 470,
        test_length: TEST_LENGTH,
    }
}

/// Outcome of one configuration: per-step NSSE or the failure message.
#[derive(Clone, Debug, PartialEq)]
pub struct Scores {
    pub result: Result<Vec<f64>, String>,
    pub wall_seconds: f64,
}

impl Scores {
    pub fn mean(&self) -> Option<f64> {
        self.result
            .as_ref()
            .ok()
            .map(|v| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn failed(&self) -> bool {
        self.result.is_err()
    }
}

fn timed<T>(f: impl FnOnce() -> Result<T, String>) -> (Result<T, String>, f64) {
    let t0 = Instant::now();
    let r = f();
    (r, t0.elapsed().as_secs_f64())
}

#[derive(Clone, Debug)]
pub struct KdmdRow {
    pub config_index: usize,
    pub config: KdmdConfig,
    pub scores: Scores,
}

/// The 32 grid configurations in config-index order (σ major).
pub fn kdmd_grid() -> Vec<KdmdConfig> {
    SIGMAS
        .iter()
        .flat_map(|&s| {
            SNAPSHOT_SIZES.iter().map(move |&m| KdmdConfig {
                kernel: KernelSpec::gaussian(s),
                snapshot_size: m,
                trunc_tol: default_trunc_tol(),
            })
        })
        .collect()
}

/// Scores every grid configuration, averaging per-step NSSE over episodes.
pub fn run_kdmd_sweep(episodes: &[(usize, Episode)]) -> Vec<KdmdRow> {
    let split = test_split();
    kdmd_grid()
        .into_par_iter()
        .enumerate()
        .map(|(config_index, config)| {
            let (result, wall_seconds) = timed(|| {
                let mut sum = vec![0.0; split.test_length];
                for (k, ep) in episodes {
                    let errs = kdmd_episode_nsse(ep, &config, &split).map_err(|e| format!("episode {k}: {e}"))?;
                    for (s, e) in sum.iter_mut().zip(errs) {
                        *s += e;
                    }
                }
                Ok(sum.into_iter().map(|s| s / episodes.len() as f64).collect())
            });
            KdmdRow {
                config_index,
                config,
                scores: Scores { result, wall_seconds },
            }
        })
        .collect()
}

/// Ascending mean NSSE, failures last, ties by config index.
fn sort_rows<R>(rows: &mut [R], key: impl Fn(&R) -> (Option<f64>, usize)) {
    rows.sort_by(|a, b| {
        let (ma, ia) = key(a);
        let (mb, ib) = key(b);
        match (ma, mb) {
            (Some(x), Some(y)) => x.total_cmp(&y).then(ia.cmp(&ib)),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => ia.cmp(&ib),
        }
    });
}

fn nsse_header(n: usize) -> impl Iterator<Item = String> {
    (1..=n).map(|h| format!("nsse_{h}"))
}

fn score_fields(scores: &Scores, n: usize) -> Vec<String> {
    let mut out = vec![
        match &scores.result {
            Ok(_) => "ok".to_string(),
            Err(e) => format!("failed: {e}"),
        },
        scores.mean().map(|m| m.to_string()).unwrap_or_default(),
    ];
    match &scores.result {
        Ok(v) => out.extend(v.iter().map(|x| x.to_string())),
        Err(_) => out.extend(std::iter::repeat_n(String::new(), n)),
    }
    out
}

pub fn timing_path(out: &Path) -> PathBuf {
    out.with_extension("timing.csv")
}

fn write_timing(out: &Path, rows: &[(usize, f64)]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(timing_path(out))?;
    w.write_record(["config_index", "wall_seconds"])?;
    for (i, t) in rows {
        w.write_record([i.to_string(), format!("{t:.3}")])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_kdmd_csv(rows: &[KdmdRow], out: &Path) -> Result<(), ExperimentError> {
    let mut rows = rows.to_vec();
    sort_rows(&mut rows, |r| (r.scores.mean(), r.config_index));
    let mut w = csv::Writer::from_path(out)?;
    let mut header: Vec<String> = ["config_index", "sigma", "snapshot_size", "status", "mean_nsse"]
        .map(String::from)
        .to_vec();
    header.extend(nsse_header(TEST_LENGTH));
    w.write_record(&header)?;
    for r in &rows {
        let mut rec = vec![
            r.config_index.to_string(),
            r.config.kernel.sigma.to_string(),
            r.config.snapshot_size.to_string(),
        ];
        rec.extend(score_fields(&r.scores, TEST_LENGTH));
        w.write_record(&rec)?;
    }
    w.flush()?;
    let mut timing: Vec<_> = rows.iter().map(|r| (r.config_index, r.scores.wall_seconds)).collect();
    timing.sort_by_key(|t| t.0);
    write_timing(out, &timing)
}

/// Per-σ mean NSSE over all snapshot sizes, best first.
pub fn rank_sigmas(rows: &[KdmdRow]) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = SIGMAS
        .iter()
        .filter_map(|&s| {
            let means: Vec<f64> = rows
                .iter()
                .filter(|r| r.config.kernel.sigma == s)
                .filter_map(|r| r.scores.mean())
                .collect();
            (!means.is_empty()).then(|| (s, means.iter().sum::<f64>() / means.len() as f64))
        })
        .collect();
    out.sort_by(|a, b| a.1.total_cmp(&b.1));
    out
}

/// Overrides applied to every sampled LRAN configuration.
#[derive(Clone, Debug)]
pub struct LranSweepOptions {
    pub runs: usize,
    pub seed: u64,
    pub channels: [usize; 4],
    pub max_epochs: usize,
}

impl LranSweepOptions {
    pub fn desk(runs: usize, seed: u64) -> Self {
        Self {
            runs,
            seed,
            channels: [4, 8, 4, 4],
            max_epochs: 50,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LranRow {
    pub config_index: usize,
    pub episode: usize,
    pub config: LranConfig,
    pub epochs: Option<usize>,
    pub scores: Scores,
}

/// Draws `runs` configurations: latent size log-uniform on [16, 1024], β
/// zero with probability [`BETA_ZERO_PROB`] and otherwise log-uniform on
/// [1e-3, 10], δ and 𝒯 uniform, learning rate and episode uniform over
/// their sets. Episode indices are drawn from those present in the data.
pub fn sample_lran_configs(opts: &LranSweepOptions, available: &[usize]) -> Vec<(usize, LranConfig)> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let pool: Vec<usize> = available.iter().copied().filter(|&k| k < EPISODE_INDICES).collect();
    let pool = if pool.is_empty() { available.to_vec() } else { pool };
    (0..opts.runs)
        .map(|i| {
            let (lo, hi) = LATENT_RANGE;
            let latent = rng.gen_range((lo as f64).ln()..=(hi as f64).ln()).exp().round() as usize;
            let beta = if rng.gen_bool(BETA_ZERO_PROB) {
                0.0
            } else {
                rng.gen_range(BETA_LOG_MIN.ln()..=BETA_MAX.ln()).exp()
            };
            let config = LranConfig {
                latent_dim: latent.clamp(lo, hi),
                sequence_length: rng.gen_range(SEQUENCE_RANGE.0..=SEQUENCE_RANGE.1),
                delta: rng.gen_range(DELTA_RANGE.0..=DELTA_RANGE.1),
                beta,
                learning_rate: LEARNING_RATES[rng.gen_range(0..LEARNING_RATES.len())],
                max_epochs: opts.max_epochs,
                channels: opts.channels,
                seed: opts.seed.wrapping_add(i as u64),
                ..LranConfig::default()
            };
            let episode = pool[rng.gen_range(0..pool.len())];
            (episode, config)
        })
        .collect()
}

/// Trains on one episode and scores the 30-step rollout from the entry.
pub fn lran_episode_nsse(episode: &Episode, config: &LranConfig) -> Result<(Vec<f64>, usize), ExperimentError> {
    let split = test_split();
    let (model, log) = rbc_lran::train(episode, config)?;
    let window = test_window(episode, &split)?;
    let preds = model.rollout(&window.entry, split.test_length)?;
    let errs = preds
        .iter()
        .zip(&window.targets)
        .map(|(p, t)| nsse(t, p))
        .collect::<Result<_, _>>()?;
    Ok((errs, log.epochs.len()))
}

pub fn run_lran_sweep(episodes: &[(usize, Episode)], opts: &LranSweepOptions) -> Vec<LranRow> {
    let available: Vec<usize> = episodes.iter().map(|(k, _)| *k).collect();
    sample_lran_configs(opts, &available)
        .into_par_iter()
        .enumerate()
        .map(|(config_index, (episode, config))| {
            let ep = &episodes.iter().find(|(k, _)| *k == episode).expect("sampled from available").1;
            let (result, wall_seconds) = timed(|| lran_episode_nsse(ep, &config).map_err(|e| e.to_string()));
            let epochs = result.as_ref().ok().map(|r| r.1);
            LranRow {
                config_index,
                episode,
                config,
                epochs,
                scores: Scores {
                    result: result.map(|r| r.0),
                    wall_seconds,
                },
            }
        })
        .collect()
}

pub fn write_lran_csv(rows: &[LranRow], out: &Path) -> Result<(), ExperimentError> {
    let mut rows = rows.to_vec();
    sort_rows(&mut rows, |r| (r.scores.mean(), r.config_index));
    let mut w = csv::Writer::from_path(out)?;
    let mut header: Vec<String> = [
        "config_index",
        "episode",
        "seed",
        "latent_dim",
        "sequence_length",
        "delta",
        "beta",
        "learning_rate",
        "batch_size",
        "max_epochs",
        "patience",
        "channels",
        "epochs_run",
        "status",
        "mean_nsse",
    ]
    .map(String::from)
    .to_vec();
    header.extend(nsse_header(TEST_LENGTH));
    w.write_record(&header)?;
    for r in &rows {
        let c = &r.config;
        let mut rec = vec![
            r.config_index.to_string(),
            r.episode.to_string(),
            c.seed.to_string(),
            c.latent_dim.to_string(),
            c.sequence_length.to_string(),
            c.delta.to_string(),
            c.beta.to_string(),
            c.learning_rate.to_string(),
            c.batch_size.to_string(),
            c.max_epochs.to_string(),
            c.patience.to_string(),
            c.channels.map(|x| x.to_string()).join("-"),
            r.epochs.map(|e| e.to_string()).unwrap_or_default(),
        ];
        rec.extend(score_fields(&r.scores, TEST_LENGTH));
        w.write_record(&rec)?;
    }
    w.flush()?;
    let mut timing: Vec<_> = rows.iter().map(|r| (r.config_index, r.scores.wall_seconds)).collect();
    timing.sort_by_key(|t| t.0);
    write_timing(out, &timing)
}

/// `kdmd` sweep over the episodes of `ra` in `data_dir`; returns the rows
/// (in config order) after writing the CSV.
pub fn cmd_sweep_kdmd(data_dir: &Path, ra: f64, out: &Path) -> Result<Vec<KdmdRow>, ExperimentError> {
    let episodes = crate::load_episodes(data_dir, ra)?;
    let rows = run_kdmd_sweep(&episodes);
    write_kdmd_csv(&rows, out)?;
    Ok(rows)
}

pub fn cmd_sweep_lran(
    data_dir: &Path,
    ra: f64,
    opts: &LranSweepOptions,
    out: &Path,
) -> Result<Vec<LranRow>, ExperimentError> {
    let episodes = crate::load_episodes(data_dir, ra)?;
    let rows = run_lran_sweep(&episodes, opts);
    write_lran_csv(&rows, out)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_has_32_configs() {
        let g = kdmd_grid();
        assert_eq!(g.len(), 32);
        assert_eq!(g[9].kernel.sigma, 2.0);
        assert_eq!(g[9].snapshot_size, 10);
    }

    #[test]
    fn sampled_configs_lie_in_table_ranges() {
        let opts = LranSweepOptions::desk(200, 4);
        let configs = sample_lran_configs(&opts, &[0, 1, 2, 3, 4, 7]);
        let mut seeds: Vec<u64> = configs.iter().map(|c| c.1.seed).collect();
        seeds.dedup();
        assert_eq!(seeds.len(), 200);
        assert!(configs.iter().any(|c| c.1.beta == 0.0));
        for (ep, c) in &configs {
            assert!(*ep < 5);
            assert!((16..=1024).contains(&c.latent_dim));
            assert!((0.9..=1.0).contains(&c.delta));
            assert!((0.0..=10.0).contains(&c.beta));
            assert!((2..=30).contains(&c.sequence_length));
            assert!(LEARNING_RATES.contains(&c.learning_rate));
            c.validate().unwrap();
        }
    }

    #[test]
    fn failures_sort_last() {
        let mk = |i, r: Result<Vec<f64>, String>| KdmdRow {
            config_index: i,
            config: KdmdConfig::default(),
            scores: Scores {
                result: r,
                wall_seconds: 0.0,
            },
        };
        let mut rows = vec![mk(0, Err("x".into())), mk(1, Ok(vec![0.5])), mk(2, Ok(vec![0.5])), mk(3, Ok(vec![0.1]))];
        sort_rows(&mut rows, |r| (r.scores.mean(), r.config_index));
        let order: Vec<_> = rows.iter().map(|r| r.config_index).collect();
        assert_eq!(order, vec![3, 1, 2, 0]);
    }

    #[test]
    fn kdmd_config_json_uses_kernel_field_names() {
        let c: KdmdConfig = serde_json::from_str(r#"{"kind":"gaussian","sigma":4.0,"snapshot_size":30}"#).unwrap();
        assert_eq!(c.kernel, KernelSpec::gaussian(4.0));
        assert_eq!(c.snapshot_size, 30);
        assert_eq!(c.trunc_tol, 1e-10);
    }
}

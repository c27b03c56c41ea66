//! Both methods on every episode with fixed configurations: NSSE curves,
//! a Nusselt trace and field renders.

use std::path::{Path, PathBuf};

use rbc_core::dataset::{nsse, nusselt_default, test_window};
use rbc_core::{Episode, Field};
use rbc_lran::{save_checkpoint, LranConfig};
use serde::de::DeserializeOwned;

use crate::render::render_field;
use crate::sweep::{kdmd_episode_predict, test_split, KdmdConfig};
use crate::{load_episodes, mean_std, ra_tag, ExperimentError, TEST_LENGTH};

/// Horizons rendered for the first episode.
pub const RENDER_STEPS: [usize; 3] = [1, 10, 25];

/// Sequence length, latent size and δ by Rayleigh number; the nearest
/// tabulated Ra (in log scale) is used.
const LRAN_TABLE: [(f64, usize, usize, f64); 4] = [
    (1e5, 18, 200, 0.9),
    (1e6, 20, 400, 0.9),
    (2e6, 20, 400, 0.9),
    (5e6, 25, 500, 0.9),
];

/// Tabulated LRAN settings with β = 0 and desk-scale widths and rate.
pub fn default_lran_config(ra: f64) -> LranConfig {
    let &(_, seq, latent, delta) = LRAN_TABLE
        .iter()
        .min_by(|a, b| (a.0.ln() - ra.ln()).abs().total_cmp(&(b.0.ln() - ra.ln()).abs()))
        .expect("non-empty table");
    LranConfig {
        latent_dim: latent,
        sequence_length: seq,
        delta,
        beta: 0.0,
        learning_rate: 1e-3,
        channels: [4, 8, 4, 4],
        ..LranConfig::default()
    }
}

pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T, ExperimentError> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ExperimentError::MissingConfig(path.to_path_buf()),
        _ => ExperimentError::Io(e),
    })?;
    serde_json::from_str(&text).map_err(|source| ExperimentError::BadConfig {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Clone, Debug)]
pub struct EpisodeResult {
    pub episode: usize,
    pub kdmd: Result<Vec<f64>, String>,
    pub lran: Result<Vec<f64>, String>,
}

#[derive(Clone, Debug)]
pub struct CompareOutput {
    pub nsse_csv: PathBuf,
    pub episodes_csv: PathBuf,
    pub nusselt_csv: PathBuf,
    pub renders: Vec<PathBuf>,
    pub results: Vec<EpisodeResult>,
}

impl CompareOutput {
    pub fn failures(&self) -> Vec<String> {
        self.results
            .iter()
            .flat_map(|r| {
                [("kdmd", &r.kdmd), ("lran", &r.lran)]
                    .into_iter()
                    .filter_map(move |(m, res)| res.as_ref().err().map(|e| format!("episode {} {m}: {e}", r.episode)))
            })
            .collect()
    }
}

struct Predictions {
    kdmd: Option<Vec<Field>>,
    lran: Option<Vec<Field>>,
}

fn score(preds: &[Field], targets: &[Field]) -> Result<Vec<f64>, ExperimentError> {
    Ok(preds.iter().zip(targets).map(|(p, t)| nsse(t, p)).collect::<Result<_, _>>()?)
}

fn run_episode(
    k: usize,
    ep: &Episode,
    kdmd: &KdmdConfig,
    lran: &LranConfig,
    out_dir: &Path,
) -> (EpisodeResult, Predictions) {
    let split = test_split();
    let kdmd_run = kdmd_episode_predict(ep, kdmd, &split);
    let lran_run = (|| {
        let (model, log) = rbc_lran::train(ep, lran)?;
        let stem = format!("lran_ra{}_ep{k}", ra_tag(ep.ra));
        save_checkpoint(&model, &out_dir.join(format!("{stem}.lran")))?;
        log.save_csv(&out_dir.join(format!("{stem}.log.csv")))?;
        let window = test_window(ep, &split)?;
        let preds = model.rollout(&window.entry, split.test_length)?;
        let errs = score(&preds, &window.targets)?;
        Ok::<_, ExperimentError>((errs, preds))
    })();
    let (kdmd_res, kdmd_preds) = split_result(kdmd_run);
    let (lran_res, lran_preds) = split_result(lran_run);
    (
        EpisodeResult {
            episode: k,
            kdmd: kdmd_res,
            lran: lran_res,
        },
        Predictions {
            kdmd: kdmd_preds,
            lran: lran_preds,
        },
    )
}

fn split_result(r: Result<(Vec<f64>, Vec<Field>), ExperimentError>) -> (Result<Vec<f64>, String>, Option<Vec<Field>>) {
    match r {
        Ok((e, p)) => (Ok(e), Some(p)),
        Err(e) => (Err(e.to_string()), None),
    }
}

fn curve(results: &[&Vec<f64>], step: usize) -> (String, String) {
    if results.is_empty() {
        return (String::new(), String::new());
    }
    let vals: Vec<f64> = results.iter().map(|r| r[step]).collect();
    let (m, s) = mean_std(&vals);
    (m.to_string(), s.to_string())
}

/// Runs both methods on every episode of `ra` in `data_dir`. Per-episode
/// failures are recorded and the remaining episodes still contribute.
pub fn cmd_compare(
    data_dir: &Path,
    ra: f64,
    kdmd: &KdmdConfig,
    lran: &LranConfig,
    out_dir: &Path,
) -> Result<CompareOutput, ExperimentError> {
    lran.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let episodes = load_episodes(data_dir, ra)?;
    let tag = ra_tag(ra);
    let mut results = Vec::with_capacity(episodes.len());
    let mut first_preds = None;
    for (k, ep) in &episodes {
        let (res, preds) = run_episode(*k, ep, kdmd, lran, out_dir);
        if first_preds.is_none() {
            first_preds = Some((*k, preds));
        }
        results.push(res);
    }

    let nsse_csv = out_dir.join(format!("nsse_ra{tag}.csv"));
    let kdmd_ok: Vec<&Vec<f64>> = results.iter().filter_map(|r| r.kdmd.as_ref().ok()).collect();
    let lran_ok: Vec<&Vec<f64>> = results.iter().filter_map(|r| r.lran.as_ref().ok()).collect();
    let mut w = csv::Writer::from_path(&nsse_csv)?;
    w.write_record(["horizon", "kdmd_mean", "kdmd_std", "lran_mean", "lran_std"])?;
    for step in 0..TEST_LENGTH {
        let (km, ks) = curve(&kdmd_ok, step);
        let (lm, ls) = curve(&lran_ok, step);
        w.write_record([(step + 1).to_string(), km, ks, lm, ls])?;
    }
    w.flush()?;

    let episodes_csv = out_dir.join(format!("nsse_ra{tag}_episodes.csv"));
    let mut w = csv::Writer::from_path(&episodes_csv)?;
    w.write_record(["method", "episode", "horizon", "nsse", "status"])?;
    for r in &results {
        for (method, res) in [("kdmd", &r.kdmd), ("lran", &r.lran)] {
            match res {
                Ok(v) => {
                    for (h, e) in v.iter().enumerate() {
                        w.write_record([method.into(), r.episode.to_string(), (h + 1).to_string(), e.to_string(), "ok".into()])?;
                    }
                }
                Err(e) => w.write_record([method.into(), r.episode.to_string(), String::new(), String::new(), format!("failed: {e}")])?,
            }
        }
    }
    w.flush()?;

    // Nusselt trace and renders for the first episode.
    let nusselt_csv = out_dir.join(format!("nusselt_ra{tag}.csv"));
    let mut renders = Vec::new();
    let (k0, ep0) = &episodes[0];
    let split = test_split();
    let window = test_window(ep0, &split)?;
    let preds = first_preds.map(|p| p.1).unwrap_or(Predictions { kdmd: None, lran: None });
    let nu = |q: &Field| nusselt_default(q, ep0.ra, ep0.pr);
    let mut w = csv::Writer::from_path(&nusselt_csv)?;
    w.write_record(["horizon", "time", "nu_truth", "nu_lran", "nu_kdmd"])?;
    let times = ep0.times();
    for (h, truth) in window.targets.iter().enumerate() {
        let pick = |p: &Option<Vec<Field>>| p.as_ref().map(|v| nu(&v[h]).to_string()).unwrap_or_default();
        w.write_record([
            (h + 1).to_string(),
            times[split.train_end + h].to_string(),
            nu(truth).to_string(),
            pick(&preds.lran),
            pick(&preds.kdmd),
        ])?;
    }
    w.flush()?;
    for tau in RENDER_STEPS {
        let mut emit = |what: &str, f: &Field| -> Result<(), ExperimentError> {
            let path = out_dir.join(format!("ra{tag}_ep{k0}_{what}_tau{tau:02}.pgm"));
            render_field(f, &path)?;
            renders.push(path);
            Ok(())
        };
        emit("truth", &window.targets[tau - 1])?;
        if let Some(p) = &preds.kdmd {
            emit("kdmd", &p[tau - 1])?;
        }
        if let Some(p) = &preds.lran {
            emit("lran", &p[tau - 1])?;
        }
    }

    Ok(CompareOutput {
        nsse_csv,
        episodes_csv,
        nusselt_csv,
        renders,
        results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_defaults() {
        let c = default_lran_config(1e6);
        assert_eq!((c.sequence_length, c.latent_dim, c.delta, c.beta), (20, 400, 0.9, 0.0));
        let c = default_lran_config(1e5);
        assert_eq!((c.sequence_length, c.latent_dim), (18, 200));
        assert_eq!(default_lran_config(4e6).latent_dim, 500);
        let k = KdmdConfig::default();
        assert_eq!((k.snapshot_size, k.kernel.sigma), (60, 2.0));
    }
}

//! Convective-flux observables, the NSSE metric, episode persistence and
//! train/test assembly.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dns::FlowState;
use crate::field::{Grid, ScalarField};
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("reference field has zero norm")]
    ZeroReference,
    #[error("degenerate temperature gradient: t_bottom == t_top")]
    DegenerateGradient,
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("bad sequence length {length}: need 2 <= length <= {train_end}")]
    BadLength { length: usize, train_end: usize },
    #[error("bad split: train_end {train_end} + test_length {test_length} exceeds {available} snapshots")]
    BadSplit {
        train_end: usize,
        test_length: usize,
        available: usize,
    },
    #[error("invalid episode: {0}")]
    InvalidEpisode(String),
}

/// Ordered convective-flux snapshots of one simulation run.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode<T: Real> {
    pub ra: f64,
    pub pr: f64,
    pub seed: u64,
    times: Vec<f64>,
    snapshots: Vec<ScalarField<T>>,
}

impl<T: Real> Episode<T> {
    pub fn new(
        ra: f64,
        pr: f64,
        seed: u64,
        times: Vec<f64>,
        snapshots: Vec<ScalarField<T>>,
    ) -> Result<Self, DatasetError> {
        if times.len() != snapshots.len() {
            return Err(DatasetError::InvalidEpisode(format!(
                "{} times for {} snapshots",
                times.len(),
                snapshots.len()
            )));
        }
        if let Some(first) = snapshots.first() {
            if snapshots.iter().any(|s| !s.same_grid(first)) {
                return Err(DatasetError::InvalidEpisode("snapshots on mixed grids".into()));
            }
        }
        if times.len() >= 2 {
            let spacing = times[1] - times[0];
            if !(spacing > 0.0) {
                return Err(DatasetError::InvalidEpisode("times must increase".into()));
            }
            let tol = 1e-9 * spacing.max(times.last().unwrap().abs());
            for (k, w) in times.windows(2).enumerate() {
                if ((w[1] - w[0]) - spacing).abs() > tol {
                    return Err(DatasetError::InvalidEpisode(format!(
                        "irregular spacing at index {}",
                        k + 1
                    )));
                }
            }
        }
        Ok(Self {
            ra,
            pr,
            seed,
            times,
            snapshots,
        })
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn snapshots(&self) -> &[ScalarField<T>] {
        &self.snapshots
    }

    pub fn snapshot(&self, index: usize) -> &ScalarField<T> {
        &self.snapshots[index]
    }

    pub fn grid(&self) -> Option<&Grid> {
        self.snapshots.first().map(|s| s.grid())
    }

    /// Spacing between records (0 for fewer than two snapshots).
    pub fn record_interval(&self) -> f64 {
        if self.times.len() >= 2 {
            self.times[1] - self.times[0]
        } else {
            0.0
        }
    }
}

/// Local convective flux `q = u_y (T - ⟨T⟩)`, using the instantaneous
/// spatial mean of the temperature.
pub fn convective_field<T: Real>(state: &FlowState<T>) -> ScalarField<T> {
    convective_flux(&state.u_y, &state.temperature).expect("state fields share a grid")
}

/// [`convective_field`] from the vertical velocity and temperature alone.
pub fn convective_flux<T: Real>(
    u_y: &ScalarField<T>,
    temperature: &ScalarField<T>,
) -> Result<ScalarField<T>, DatasetError> {
    if !u_y.same_grid(temperature) {
        return Err(DatasetError::GridMismatch);
    }
    let mean = temperature.mean();
    let values = &temperature.values().mapv(|t| t - mean) * u_y.values();
    Ok(ScalarField::from_raw(*temperature.grid(), values))
}

/// Nusselt number from the spatially averaged flux:
/// `⟨q⟩ / (κ (T_b - T_t) / H)` with `κ = 1/√(Ra Pr)`.
pub fn nusselt<T: Real>(
    q: &ScalarField<T>,
    ra: f64,
    pr: f64,
    t_bottom: f64,
    t_top: f64,
    h: f64,
) -> Result<T, DatasetError> {
    if t_bottom == t_top {
        return Err(DatasetError::DegenerateGradient);
    }
    let kappa = 1.0 / (ra * pr).sqrt();
    Ok(q.mean() / T::lit(kappa * (t_bottom - t_top) / h))
}

/// [`nusselt`] with the reference walls `(T_b, T_t) = (2, 1)` and `H = 1`.
pub fn nusselt_default<T: Real>(q: &ScalarField<T>, ra: f64, pr: f64) -> T {
    nusselt(q, ra, pr, 2.0, 1.0, 1.0).expect("non-degenerate defaults")
}

/// Normalized sum of squared errors `‖q - q̂‖² / ‖q‖²`.
pub fn nsse<T: Real>(truth: &ScalarField<T>, prediction: &ScalarField<T>) -> Result<T, DatasetError> {
    if !truth.same_grid(prediction) {
        return Err(DatasetError::GridMismatch);
    }
    let denom = truth.norm_sq();
    if denom == T::zero() {
        return Err(DatasetError::ZeroReference);
    }
    let num: T = truth
        .values()
        .iter()
        .zip(prediction.values().iter())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    Ok(num / denom)
}

/// Where an episode switches from training data to the test window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_end: usize,
    pub test_length: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_end: 470,
            test_length: 30,
        }
    }
}

impl SplitSpec {
    pub fn check(&self, available: usize) -> Result<(), DatasetError> {
        if self.train_end == 0
            || self.test_length == 0
            || self.train_end + self.test_length > available
        {
            return Err(DatasetError::BadSplit {
                train_end: self.train_end,
                test_length: self.test_length,
                available,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitTag {
    Train,
    Validation,
}

/// Overlapping training windows, identified by their start index, with a
/// seeded train/validation assignment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SequenceSet {
    pub length: usize,
    pub starts: Vec<usize>,
    pub tags: Vec<SplitTag>,
}

impl SequenceSet {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    fn starts_tagged(&self, tag: SplitTag) -> Vec<usize> {
        self.starts
            .iter()
            .zip(&self.tags)
            .filter(|(_, t)| **t == tag)
            .map(|(s, _)| *s)
            .collect()
    }

    pub fn train_starts(&self) -> Vec<usize> {
        self.starts_tagged(SplitTag::Train)
    }

    pub fn validation_starts(&self) -> Vec<usize> {
        self.starts_tagged(SplitTag::Validation)
    }
}

/// Windows of `length` snapshots starting at `0 ..= train_end - length - 1`,
/// split 80/20 (validation rounded down) by a seeded shuffle.
pub fn make_sequences<T: Real>(
    episode: &Episode<T>,
    length: usize,
    split: &SplitSpec,
    split_seed: u64,
) -> Result<SequenceSet, DatasetError> {
    if length < 2 || length > split.train_end {
        return Err(DatasetError::BadLength {
            length,
            train_end: split.train_end,
        });
    }
    if episode.len() < split.train_end {
        return Err(DatasetError::BadSplit {
            train_end: split.train_end,
            test_length: 0,
            available: episode.len(),
        });
    }
    let starts: Vec<usize> = (0..split.train_end - length).collect();
    let n_val = starts.len() / 5;
    let mut order: Vec<usize> = (0..starts.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(split_seed));
    let mut tags = vec![SplitTag::Train; starts.len()];
    for &i in &order[..n_val] {
        tags[i] = SplitTag::Validation;
    }
    Ok(SequenceSet {
        length,
        starts,
        tags,
    })
}

/// Entry snapshot (last training frame) and the prediction targets.
#[derive(Clone, Debug)]
pub struct TestWindow<T: Real> {
    pub entry_index: usize,
    pub entry: ScalarField<T>,
    pub targets: Vec<ScalarField<T>>,
}

pub fn test_window<T: Real>(episode: &Episode<T>, split: &SplitSpec) -> Result<TestWindow<T>, DatasetError> {
    split.check(episode.len())?;
    let entry_index = split.train_end - 1;
    Ok(TestWindow {
        entry_index,
        entry: episode.snapshot(entry_index).clone(),
        targets: episode.snapshots()[split.train_end..split.train_end + split.test_length].to_vec(),
    })
}

const MAGIC: &[u8; 4] = b"RBCE";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 64;

/// Sidecar text copy of an RBCE header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeManifest {
    pub format: String,
    pub version: u32,
    pub ra: f64,
    pub pr: f64,
    pub seed: u64,
    pub grid: Grid,
    pub n_snapshots: usize,
    pub times: Vec<f64>,
}

/// `<dir>/<stem>.manifest.json` for an episode file.
pub fn manifest_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.manifest.json"))
}

/// Writes the binary episode and its JSON manifest.
pub fn write_episode<T: Real>(episode: &Episode<T>, path: &Path) -> Result<(), DatasetError> {
    let grid = *episode
        .grid()
        .ok_or_else(|| DatasetError::InvalidEpisode("cannot persist an empty episode".into()))?;
    let mut out = BufWriter::new(File::create(path)?);
    let mut header = Vec::with_capacity(HEADER_LEN);
    header.extend_from_slice(MAGIC);
    for v in [VERSION, grid.ny as u32, grid.nx as u32, episode.len() as u32, 0] {
        header.extend_from_slice(&v.to_le_bytes());
    }
    for v in [episode.ra, episode.pr, episode.times[0], episode.record_interval()] {
        header.extend_from_slice(&v.to_le_bytes());
    }
    header.extend_from_slice(&episode.seed.to_le_bytes());
    debug_assert_eq!(header.len(), HEADER_LEN);
    out.write_all(&header)?;
    for snap in episode.snapshots() {
        for v in snap.values().iter() {
            out.write_all(&(v.to_f64_lossy() as f32).to_le_bytes())?;
        }
    }
    out.flush()?;

    let manifest = EpisodeManifest {
        format: "RBCE".into(),
        version: VERSION,
        ra: episode.ra,
        pr: episode.pr,
        seed: episode.seed,
        grid,
        n_snapshots: episode.len(),
        times: episode.times.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| DatasetError::Format(e.to_string()))?;
    fs::write(manifest_path(path), json + "\n")?;
    Ok(())
}

fn u32_at(buf: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(buf[at..at + 4].try_into().expect("4 bytes"))
}

fn f64_at(buf: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(buf[at..at + 8].try_into().expect("8 bytes"))
}

/// Reads an RBCE file; when the sidecar manifest exists it must agree with
/// the binary header and supplies the domain extent.
pub fn read_episode<T: Real>(path: &Path) -> Result<Episode<T>, DatasetError> {
    let mut input = BufReader::new(File::open(path)?);
    let mut header = [0u8; HEADER_LEN];
    input
        .read_exact(&mut header)
        .map_err(|_| DatasetError::Format("truncated header".into()))?;
    if &header[0..4] != MAGIC {
        return Err(DatasetError::Format(format!(
            "bad magic {:?}, expected \"RBCE\"",
            String::from_utf8_lossy(&header[0..4])
        )));
    }
    let version = u32_at(&header, 4);
    if version != VERSION {
        return Err(DatasetError::Format(format!("unsupported version {version}")));
    }
    let ny = u32_at(&header, 8) as usize;
    let nx = u32_at(&header, 12) as usize;
    let n = u32_at(&header, 16) as usize;
    let ra = f64_at(&header, 24);
    let pr = f64_at(&header, 32);
    let t_first = f64_at(&header, 40);
    let dt_record = f64_at(&header, 48);
    let seed = u64::from_le_bytes(header[56..64].try_into().expect("8 bytes"));

    let mpath = manifest_path(path);
    let manifest = if mpath.exists() {
        let text = fs::read_to_string(&mpath)?;
        let m: EpisodeManifest = serde_json::from_str(&text)
            .map_err(|e| DatasetError::Format(format!("manifest {}: {e}", mpath.display())))?;
        let mismatch = |what: &str, header: String, manifest: String| {
            DatasetError::Format(format!(
                "manifest {what} mismatch: header {header}, manifest {manifest}"
            ))
        };
        if m.ra != ra {
            return Err(mismatch("ra", ra.to_string(), m.ra.to_string()));
        }
        if m.pr != pr {
            return Err(mismatch("pr", pr.to_string(), m.pr.to_string()));
        }
        if m.seed != seed {
            return Err(mismatch("seed", seed.to_string(), m.seed.to_string()));
        }
        if (m.grid.ny, m.grid.nx) != (ny, nx) {
            return Err(mismatch(
                "grid",
                format!("{ny}x{nx}"),
                format!("{}x{}", m.grid.ny, m.grid.nx),
            ));
        }
        if m.n_snapshots != n || m.times.len() != n {
            return Err(mismatch("n_snapshots", n.to_string(), m.n_snapshots.to_string()));
        }
        Some(m)
    } else {
        None
    };

    let grid = match &manifest {
        Some(m) => m.grid,
        None => Grid::new(nx, ny).map_err(|e| DatasetError::Format(e.to_string()))?,
    };
    let times = match manifest {
        Some(m) => m.times,
        None => (0..n).map(|k| t_first + k as f64 * dt_record).collect(),
    };

    let per = ny * nx;
    let mut raw = vec![0u8; per * 4];
    let mut snapshots = Vec::with_capacity(n);
    for k in 0..n {
        input
            .read_exact(&mut raw)
            .map_err(|_| DatasetError::Format(format!("truncated data at snapshot {k} of {n}")))?;
        let flat: Vec<T> = raw
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect();
        snapshots.push(
            ScalarField::from_flat(grid, flat).map_err(|e| DatasetError::Format(e.to_string()))?,
        );
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(DatasetError::Format(format!("{} trailing bytes", rest.len())));
    }
    Episode::new(ra, pr, seed, times, snapshots)
}

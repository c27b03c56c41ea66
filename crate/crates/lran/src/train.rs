//! Mini-batch Adam training with early stopping on the validation loss.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayD, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rbc_core::dataset::{make_sequences, SplitSpec};
use rbc_core::Episode;

use crate::loss::batch_loss;
use crate::model::{Architecture, LranModel};
use crate::{LranConfig, LranError};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
/// Smallest validation-loss decrease that counts as progress.
pub const MIN_IMPROVEMENT: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainingLog {
    pub fn best_val_loss(&self) -> Option<f64> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch).map(|e| e.val_loss)
    }

    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "epoch,train_loss,val_loss")?;
        for e in &self.epochs {
            writeln!(out, "{},{:e},{:e}", e.epoch, e.train_loss, e.val_loss)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        std::fs::write(path, buf)
    }
}

struct Adam {
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
    t: i32,
    lr: f64,
}

impl Adam {
    fn new(params: &[ArrayD<f64>], lr: f64) -> Self {
        let zeros: Vec<_> = params.iter().map(|p| ArrayD::zeros(p.raw_dim())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [ArrayD<f64>], grads: &[ArrayD<f64>]) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        let lr = self.lr;
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
            });
        }
    }
}

/// Population mean and standard deviation over snapshots `[0, train_end)`.
pub fn normalization_stats(episode: &Episode, train_end: usize) -> Result<(f64, f64), LranError> {
    let snaps = &episode.snapshots()[..train_end.min(episode.len())];
    let count: usize = snaps.iter().map(|s| s.values().len()).sum();
    if count == 0 {
        return Err(LranError::ZeroVariance);
    }
    let mean = snaps.iter().flat_map(|s| s.values().iter()).sum::<f64>() / count as f64;
    let var = snaps
        .iter()
        .flat_map(|s| s.values().iter())
        .map(|v| (v - mean).powi(2))
        .sum::<f64>()
        / count as f64;
    let std = var.sqrt();
    if !(std > 0.0 && std.is_finite()) {
        return Err(LranError::ZeroVariance);
    }
    Ok((mean, std))
}

fn windows<'a>(frames: &'a [Array2<f64>], starts: &[usize], length: usize) -> Vec<Vec<&'a Array2<f64>>> {
    starts
        .iter()
        .map(|&s| frames[s..s + length].iter().collect())
        .collect()
}

/// Trains a fresh model on the training prefix of `episode`.
///
/// Sequences are split 80/20 into training and validation windows. After
/// each epoch the validation loss is evaluated; training stops after
/// `patience` epochs without an improvement of at least [`MIN_IMPROVEMENT`]
/// and the parameters of the best epoch are returned. When the validation
/// split is empty the epoch's training loss stands in for it.
pub fn train(episode: &Episode, config: &LranConfig) -> Result<(LranModel, TrainingLog), LranError> {
    config.validate()?;
    let split = SplitSpec {
        train_end: config.train_end,
        test_length: 1,
    };
    let set = make_sequences(episode, config.sequence_length, &split, config.seed)?;
    let grid = *episode
        .grid()
        .ok_or_else(|| LranError::BadSequence("episode has no snapshots".into()))?;
    let arch = Architecture::for_grid(&grid, config.channels, config.latent_dim)?;
    let mut model = LranModel::new(arch, config.seed);
    let (mean, std) = normalization_stats(episode, config.train_end)?;
    model.input_mean = mean;
    model.input_std = std;

    let frames = episode.snapshots()[..config.train_end]
        .iter()
        .map(|q| model.normalized_input(q))
        .collect::<Result<Vec<_>, _>>()?;
    let mut train_starts = set.train_starts();
    let val_windows = windows(&frames, &set.validation_starts(), set.length);

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);
    let mut adam = Adam::new(model.params(), config.learning_rate);
    let mut log = TrainingLog::default();
    let mut best = f64::INFINITY;
    let mut best_params = model.params().to_vec();
    let mut stale = 0;

    for epoch in 1..=config.max_epochs {
        train_starts.shuffle(&mut shuffle_rng);
        let mut sum = 0.0;
        for (batch, chunk) in train_starts.chunks(config.batch_size).enumerate() {
            let seqs = windows(&frames, chunk, set.length);
            let (loss, grads) = batch_loss(&model, &seqs, config, true);
            if !loss.is_finite() {
                return Err(LranError::NonFiniteLoss { epoch, batch, loss });
            }
            sum += loss * chunk.len() as f64;
            adam.step(model.params_mut(), &grads.expect("gradients requested"));
        }
        let train_loss = sum / train_starts.len().max(1) as f64;
        let val_loss = if val_windows.is_empty() {
            train_loss
        } else {
            batch_loss(&model, &val_windows, config, false).0
        };
        if !val_loss.is_finite() {
            return Err(LranError::NonFiniteLoss {
                epoch,
                batch: usize::MAX,
                loss: val_loss,
            });
        }
        log.epochs.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best - MIN_IMPROVEMENT {
            best = val_loss;
            best_params = model.params().to_vec();
            log.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                log.stopped_early = true;
                break;
            }
        }
    }
    model.params_mut().clone_from_slice(&best_params);
    Ok((model, log))
}

/// Mean loss of the model over the given windows of an episode.
pub fn evaluate(
    model: &LranModel,
    episode: &Episode,
    starts: &[usize],
    config: &LranConfig,
) -> Result<f64, LranError> {
    if starts.is_empty() {
        return Err(LranError::BadSequence("no windows to evaluate".into()));
    }
    let end = starts.iter().map(|s| s + config.sequence_length).max().unwrap_or(0);
    if end > episode.len() {
        return Err(LranError::BadSequence(format!(
            "window ends at {end}, episode has {} snapshots",
            episode.len()
        )));
    }
    let frames = episode.snapshots()[..end]
        .iter()
        .map(|q| model.normalized_input(q))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(batch_loss(model, &windows(&frames, starts, config.sequence_length), config, false).0)
}

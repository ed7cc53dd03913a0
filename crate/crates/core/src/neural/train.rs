//! Subsequence training with RMSProp, and sequence inference.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;

use super::dataset::{batch, EncodedSequence, Normalizer};
use super::network::{Mode, Network};
use super::optim::{rmsprop_step, RmsPropConfig, RmsPropState};
use super::tape::Tape;
use crate::geometry::RelativePose;
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    /// Multiplier applied every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    pub epochs: usize,
    pub subsequence_length: usize,
    pub rmsprop: RmsPropConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            lr_decay: 0.75,
            decay_every: 25,
            epochs: 200,
            subsequence_length: 16,
            rmsprop: RmsPropConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidInput(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.subsequence_length < 2 {
            return Err(Error::InvalidInput("subsequence length must be at least 2".into()));
        }
        if self.decay_every == 0 || !(self.lr_decay > 0.0) {
            return Err(Error::InvalidInput("invalid learning-rate schedule".into()));
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.decay_every) as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
}

pub fn history_to_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,mean_loss,lr\n");
    for r in history {
        writeln!(out, "{},{},{}", r.epoch, r.mean_loss, r.lr).expect("write to string");
    }
    out
}

/// Optimizer state and progress, enough to resume training.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainState {
    pub optimizer: RmsPropState,
    /// Number of completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Non-overlapping windows of `len` pairs from a random per-sequence offset, shuffled.
fn epoch_windows<R: Rng>(data: &[EncodedSequence], len: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let mut windows = Vec::new();
    for (s, seq) in data.iter().enumerate() {
        let pairs = seq.pairs();
        let offset = rng.random_range(0..len.min(pairs - len + 1));
        let mut start = offset;
        while start + len <= pairs {
            windows.push((s, start));
            start += len;
        }
    }
    windows.shuffle(rng);
    windows
}

fn targets(seq: &EncodedSequence, start: usize, len: usize) -> Result<Vec<f64>> {
    let t = seq
        .targets
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("training sequence has no ground truth".into()))?;
    Ok(t[start..start + len].concat())
}

fn check_dataset(data: &[EncodedSequence], len: usize) -> Result<()> {
    if data.is_empty() {
        return Err(Error::DatasetTooShort("no training sequences".into()));
    }
    for (i, s) in data.iter().enumerate() {
        if s.pairs() < len {
            return Err(Error::DatasetTooShort(format!(
                "sequence {i} has {} frame pairs, fewer than the subsequence length {len}",
                s.pairs()
            )));
        }
        if s.targets.is_none() {
            return Err(Error::InvalidInput(format!("sequence {i} has no ground truth")));
        }
    }
    Ok(())
}

/// Train from `state.epoch` up to `tc.epochs`, appending one record per epoch.
///
/// Each epoch draws its window offsets, order and dropout masks from streams
/// keyed by the seed and the epoch number, so a resumed run matches an uninterrupted one.
pub fn train(
    net: &mut Network,
    data: &[EncodedSequence],
    norm: &Normalizer,
    tc: &TrainConfig,
    state: &mut TrainState,
) -> Result<Vec<EpochRecord>> {
    tc.validate()?;
    let len = tc.subsequence_length;
    if state.epoch >= tc.epochs {
        return Ok(Vec::new());
    }
    check_dataset(data, len)?;
    let gamma = net.config.gamma;
    let mut records = Vec::new();
    for epoch in state.epoch..tc.epochs {
        let lr = tc.lr_at(epoch);
        let mut order_rng = rng::stream(tc.seed, &format!("train.shuffle/{epoch}"));
        let mut dropout_rng = rng::stream(tc.seed, &format!("train.dropout/{epoch}"));
        let windows = epoch_windows(data, len, &mut order_rng);
        let mut total = 0.0;
        for &(s, start) in &windows {
            let input = batch(&data[s], start, len, norm, &net.config)?;
            let truth = targets(&data[s], start, len)?;
            let mut tape = Tape::new();
            let bound = net.params.bind(&mut tape);
            let pred = net.forward(&mut tape, &bound, &input, Mode::Train, Some(&mut dropout_rng))?;
            let loss = tape.pose_loss(pred, &truth, gamma)?;
            let value = tape.value(loss)[0];
            if !value.is_finite() {
                return Err(Error::Numerical(format!("non-finite loss at epoch {epoch}")));
            }
            tape.backward(loss)?;
            net.params.collect_grads(&tape, &bound)?;
            rmsprop_step(&mut net.params, &mut state.optimizer, lr, &tc.rmsprop)?;
            total += value;
        }
        let record = EpochRecord {
            epoch,
            mean_loss: total / windows.len() as f64,
            lr,
        };
        records.push(record);
        state.history.push(record);
        state.epoch = epoch + 1;
    }
    Ok(records)
}

/// Mean eval-mode loss over consecutive windows of `len` pairs (the last may be shorter).
pub fn evaluate_loss(net: &Network, data: &[EncodedSequence], norm: &Normalizer, len: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0;
    for seq in data {
        let mut start = 0;
        while start < seq.pairs() {
            let n = len.min(seq.pairs() - start);
            let pred = net.predict(&batch(seq, start, n, norm, &net.config)?)?;
            let truth: Vec<[f64; 6]> = seq
                .targets
                .as_ref()
                .ok_or_else(|| Error::InvalidInput("sequence has no ground truth".into()))?[start..start + n]
                .to_vec();
            total += super::pose_loss(&pred, &truth, net.config.gamma)?;
            count += 1;
            start += n;
        }
    }
    if count == 0 {
        return Err(Error::DatasetTooShort("nothing to evaluate".into()));
    }
    Ok(total / count as f64)
}

/// One relative pose per consecutive frame pair, predicted in chunks of `chunk` pairs
/// with a fresh recurrent state per chunk. Dropout is off.
pub fn infer_sequence(net: &Network, seq: &EncodedSequence, norm: &Normalizer, chunk: usize) -> Result<Vec<RelativePose>> {
    if seq.pairs() == 0 {
        return Err(Error::DatasetTooShort("inference needs at least 2 frames".into()));
    }
    let chunk = chunk.max(1);
    let mut out = Vec::with_capacity(seq.pairs());
    let mut start = 0;
    while start < seq.pairs() {
        let n = chunk.min(seq.pairs() - start);
        let pred = net.predict(&batch(seq, start, n, norm, &net.config)?)?;
        out.extend(pred.iter().map(|v| RelativePose::from_vector(v)));
        start += n;
    }
    Ok(out)
}

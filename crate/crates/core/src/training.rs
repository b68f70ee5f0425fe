//! Mini-batch Adam training with validation-accuracy early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use emoformer_tensor::{adam_step, AdamConfig, AdamState, Tape, Tensor, TensorError};

use crate::dataset::EmotionSet;
use crate::error::{Error, Result};
use crate::features::{FeatureSample, InputKind};
use crate::metrics::{argmax_rows, evaluate_predictions, Metrics};
use crate::model::{Batch, EmoFormer, Mode};

pub const SEED_ENV: &str = "EMOFORMER_SEED";
/// Samples per inference pass.
const PREDICT_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub split_ratio: f64,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { batch_size: 64, max_epochs: 50, patience: 10, split_ratio: 0.7, seed: 42, adam: AdamConfig::default() }
    }
}

impl TrainConfig {
    /// Defaults for a feature kind: x-vector runs are shorter.
    pub fn for_kind(kind: InputKind) -> Self {
        match kind {
            InputKind::Xvector => Self { max_epochs: 20, patience: 5, ..Self::default() },
            InputKind::Mfcc | InputKind::Fused => Self::default(),
        }
    }

    /// Replaces the seed with `EMOFORMER_SEED` when it is set.
    pub fn with_env_seed(mut self) -> Result<Self> {
        if let Ok(raw) = std::env::var(SEED_ENV) {
            self.seed = raw
                .trim()
                .parse()
                .map_err(|_| Error::Argument(format!("{SEED_ENV}={raw:?} is not an unsigned integer")))?;
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Argument("batch_size must be positive".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Argument("max_epochs must be positive".into()));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Argument(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Argument(format!("split_ratio {} must lie in (0, 1)", self.split_ratio)));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::Argument("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Tracks the best monitored value; strict improvement resets the counter.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: None, wait: 0 }
    }

    pub fn observe(&mut self, epoch: usize, value: f64) -> StopDecision {
        match self.best {
            Some((_, b)) if value <= b => {
                self.wait += 1;
                if self.wait >= self.patience { StopDecision::Stop } else { StopDecision::Continue }
            }
            _ => {
                self.best = Some((epoch, value));
                self.wait = 0;
                StopDecision::Improved
            }
        }
    }

    /// `(epoch, value)` of the best observation.
    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Measured on the training batches in train mode.
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub stopped_early: bool,
}

/// Samples with integer labels.
#[derive(Clone, Debug, Default)]
pub struct LabeledSet {
    pub samples: Vec<FeatureSample>,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn new(samples: Vec<FeatureSample>, labels: Vec<usize>) -> Result<Self> {
        if samples.len() != labels.len() {
            return Err(Error::shape("labeled set", samples.len(), labels.len()));
        }
        Ok(Self { samples, labels })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Stacks the chosen samples into model inputs.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let n = indices.len();
        let first = self.samples.get(indices.first().copied().ok_or(Error::Empty("batch"))?).unwrap();
        let mfcc = match &first.mfcc {
            Some(m) => {
                let mut data = Vec::with_capacity(n * m.data.len());
                for &i in indices {
                    let s = self.samples[i].mfcc.as_ref().ok_or_else(|| Error::Argument("sample lacks MFCC".into()))?;
                    if (s.rows, s.cols) != (m.rows, m.cols) {
                        return Err(Error::shape("MFCC segment", format!("{}x{}", m.rows, m.cols), format!("{}x{}", s.rows, s.cols)));
                    }
                    data.extend_from_slice(&s.data);
                }
                Some(Tensor::new(&[n, m.rows, m.cols, 1], data)?)
            }
            None => None,
        };
        let xvector = match &first.xvector {
            Some(v) => {
                let mut data = Vec::with_capacity(n * v.len());
                for &i in indices {
                    let s = self.samples[i].xvector.as_ref().ok_or_else(|| Error::Argument("sample lacks x-vector".into()))?;
                    if s.len() != v.len() {
                        return Err(Error::shape("x-vector", v.len(), s.len()));
                    }
                    data.extend_from_slice(s);
                }
                Some(Tensor::new(&[n, v.len()], data)?)
            }
            None => None,
        };
        Ok(Batch { mfcc, xvector })
    }

    pub fn one_hot(&self, indices: &[usize], classes: usize) -> Tensor {
        let mut t = Tensor::zeros(&[indices.len(), classes]);
        for (r, &i) in indices.iter().enumerate() {
            t.data_mut()[r * classes + self.labels[i]] = 1.0;
        }
        t
    }
}

/// Inference-mode probabilities for every sample, row-major `[N × K]`.
pub fn predict_all(model: &EmoFormer, data: &LabeledSet) -> Result<Vec<f64>> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len() * model.config().num_classes);
    for chunk in idx.chunks(PREDICT_CHUNK) {
        out.extend_from_slice(model.predict(&data.batch(chunk)?)?.data());
    }
    Ok(out)
}

fn mean_cross_entropy(probs: &[f64], labels: &[usize], k: usize) -> f64 {
    let total: f64 = labels.iter().enumerate().map(|(i, &y)| -(probs[i * k + y] + 1e-12).ln()).sum();
    total / labels.len() as f64
}

/// Batches of a shuffled order; a trailing single sample joins the previous batch.
fn batches(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().unwrap().len() == 1 {
        let tail = out.pop().unwrap();
        out.last_mut().unwrap().extend(tail);
    }
    out
}

fn numeric_fault(epoch: usize, batch: usize, e: Error) -> Error {
    match e {
        Error::Tensor(TensorError::NumericFault { op }) => {
            Error::NumericFault { epoch, batch, detail: format!("non-finite value in {op}") }
        }
        other => other,
    }
}

/// Trains in place and restores the weights of the best validation epoch.
pub fn train(model: &mut EmoFormer, train: &LabeledSet, val: &LabeledSet, cfg: &TrainConfig) -> Result<History> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if val.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    let k = model.config().num_classes;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = model.param_values();
    let mut adam = AdamState::new(&params);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = (params.clone(), model.running_stats().to_vec());
    let mut history = History::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0u64;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, idx) in batches(&order, cfg.batch_size).iter().enumerate() {
            let batch = train.batch(idx)?;
            let targets = train.one_hot(idx, k);
            let mut tape = Tape::new();
            let pass = model
                .forward(&mut tape, &batch, Mode::Train { seed: cfg.seed, step }, true)
                .and_then(|p| Ok((tape.cross_entropy(p.probs, &targets)?, p)))
                .map_err(|e| numeric_fault(epoch, b + 1, e));
            let (loss, pass) = pass?;
            let loss_value = tape.value(loss).item();
            if !loss_value.is_finite() {
                return Err(Error::NumericFault { epoch, batch: b + 1, detail: format!("loss {loss_value}") });
            }
            tape.backward(loss).map_err(|e| numeric_fault(epoch, b + 1, e.into()))?;
            let grads: Vec<Tensor> = pass
                .params
                .iter()
                .zip(&params)
                .map(|(&v, p)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
                .collect();
            let probs = tape.value(pass.probs).data().to_vec();
            adam_step(&mut params, &grads, &mut adam, &cfg.adam)?;
            if params.iter().any(|p| !p.is_finite()) {
                return Err(Error::NumericFault { epoch, batch: b + 1, detail: "non-finite parameter after update".into() });
            }
            model.set_param_values(params.clone())?;
            model.update_running_stats(&pass.bn_stats);
            step += 1;
            loss_sum += loss_value * idx.len() as f64;
            correct += argmax_rows(&probs, k).iter().zip(idx).filter(|(p, &i)| **p == train.labels[i]).count();
        }
        let val_probs = predict_all(model, val)?;
        let val_pred = argmax_rows(&val_probs, k);
        let val_correct = val_pred.iter().zip(&val.labels).filter(|(p, y)| p == y).count();
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            val_loss: mean_cross_entropy(&val_probs, &val.labels, k),
            val_accuracy: val_correct as f64 / val.len() as f64,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} acc {:.4} val_loss {:.4} val_acc {:.4}",
            record.train_loss,
            record.train_accuracy,
            record.val_loss,
            record.val_accuracy
        );
        let decision = stopper.observe(epoch, record.val_accuracy);
        history.epochs.push(record);
        match decision {
            StopDecision::Improved => best = (params.clone(), model.running_stats().to_vec()),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                history.stopped_early = true;
                break;
            }
        }
    }
    let (best_epoch, best_acc) = stopper.best().expect("at least one epoch");
    history.best_epoch = best_epoch;
    history.best_val_accuracy = best_acc;
    model.set_param_values(best.0)?;
    model.set_running_stats(best.1);
    Ok(history)
}

pub fn evaluate(model: &EmoFormer, data: &LabeledSet, set: &EmotionSet) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let probs = predict_all(model, data)?;
    evaluate_predictions(&data.labels, &argmax_rows(&probs, set.len()), set)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plateau_after_epoch_three_stops_at_thirteen() {
        let mut es = EarlyStopping::new(10);
        let accs = [0.2, 0.3, 0.5];
        let mut stopped = None;
        for epoch in 1..=50 {
            let acc = if epoch <= 3 { accs[epoch - 1] } else { 0.5 };
            if es.observe(epoch, acc) == StopDecision::Stop {
                stopped = Some(epoch);
                break;
            }
        }
        assert_eq!(stopped, Some(13));
        assert_eq!(es.best(), Some((3, 0.5)));
    }

    #[test]
    fn singleton_tail_is_merged() {
        let order: Vec<usize> = (0..5).collect();
        assert_eq!(batches(&order, 2), vec![vec![0, 1], vec![2, 3, 4]]);
        assert_eq!(batches(&order[..1], 2), vec![vec![0]]);
    }

    #[test]
    fn kind_defaults() {
        let x = TrainConfig::for_kind(InputKind::Xvector);
        assert_eq!((x.max_epochs, x.patience), (20, 5));
        let m = TrainConfig::for_kind(InputKind::Mfcc);
        assert_eq!((m.batch_size, m.max_epochs, m.patience), (64, 50, 10));
        assert!(TrainConfig { patience: 60, ..m }.validate().is_err());
    }
}

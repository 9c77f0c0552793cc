//! One seeded training run: per-example SGD with teacher forcing, early
//! stopping on validation loss, and per-epoch accuracy snapshots.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::Checkpoint;
use crate::encoding::{EncodingError, Vocab};
use crate::grammar::Example;
use crate::holdout::DataSplit;
use crate::numerics::NumericsError;
use crate::seq2seq::{Fault, ModelConfig, ModelError, Seq2Seq};
use crate::{seeded_rng, RngStream};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite loss at epoch {epoch}, example {example_id}: {detail}")]
    NonFinite { epoch: usize, example_id: usize, detail: String },
}

impl From<NumericsError> for TrainError {
    fn from(e: NumericsError) -> Self {
        TrainError::Model(ModelError::Numerics(e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub early_stop_delta: f64,
    pub early_stop_patience: usize,
    pub seed: u64,
    #[serde(default)]
    pub clip_norm: Option<f64>,
}

impl TrainConfig {
    pub fn new(model: ModelConfig, seed: u64) -> Self {
        TrainConfig {
            model,
            learning_rate: 0.01,
            max_epochs: 100,
            early_stop_delta: 0.005,
            early_stop_patience: 3,
            seed,
            clip_norm: None,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.model.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if self.max_epochs == 0 {
            return Err(TrainError::InvalidConfig("max_epochs must be >= 1".into()));
        }
        if self.early_stop_patience == 0 {
            return Err(TrainError::InvalidConfig("early_stop_patience must be >= 1".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(TrainError::InvalidConfig(format!("clip_norm must be > 0, got {c}")));
            }
        }
        Ok(())
    }

    /// Settings that differ from the published defaults, as `name=value`.
    pub fn non_paper(&self) -> Vec<String> {
        let d = TrainConfig::new(self.model.clone(), self.seed);
        let mut out = Vec::new();
        if self.model.hidden_size != 256 {
            out.push(format!("hidden_size={}", self.model.hidden_size));
        }
        if self.model.embed_size != 256 {
            out.push(format!("embed_size={}", self.model.embed_size));
        }
        if self.learning_rate != d.learning_rate {
            out.push(format!("learning_rate={}", self.learning_rate));
        }
        if self.max_epochs != d.max_epochs {
            out.push(format!("max_epochs={}", self.max_epochs));
        }
        if self.early_stop_delta != d.early_stop_delta {
            out.push(format!("early_stop_delta={}", self.early_stop_delta));
        }
        if self.early_stop_patience != d.early_stop_patience {
            out.push(format!("early_stop_patience={}", self.early_stop_patience));
        }
        if let Some(c) = self.clip_norm {
            out.push(format!("clip_norm={c}"));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::EarlyStop => "early_stop",
            StopReason::MaxEpochs => "max_epochs",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub accuracy: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub epochs: Vec<EpochRecord>,
    pub stop_reason: StopReason,
    pub final_epoch: usize,
}

impl RunHistory {
    pub fn last(&self) -> &EpochRecord {
        self.epochs.last().expect("a history has at least one epoch")
    }

    pub fn final_accuracy(&self, subset: &str) -> Option<f64> {
        self.last().accuracy.get(subset).copied()
    }

    /// Accuracy of `subset` at every epoch, in order.
    pub fn series(&self, subset: &str) -> Option<Vec<f64>> {
        self.epochs.iter().map(|r| r.accuracy.get(subset).copied()).collect()
    }

    pub fn subsets(&self) -> Vec<String> {
        self.epochs.first().map(|r| r.accuracy.keys().cloned().collect()).unwrap_or_default()
    }

    /// Long-format CSV: `epoch,train_loss,val_loss,subset,accuracy`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,subset,accuracy\n");
        for r in &self.epochs {
            for (subset, acc) in &r.accuracy {
                writeln!(out, "{},{:?},{:?},{},{:?}", r.epoch, r.train_loss, r.val_loss, subset, acc).unwrap();
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, String> {
        let mut epochs: Vec<EpochRecord> = Vec::new();
        for (n, line) in text.lines().enumerate().skip(1) {
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(format!("line {}: expected 5 fields", n + 1));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| format!("line {}: {e}", n + 1));
            let epoch: usize = f[0].parse().map_err(|e| format!("line {}: {e}", n + 1))?;
            if epochs.last().map(|r| r.epoch) != Some(epoch) {
                epochs.push(EpochRecord { epoch, train_loss: num(f[1])?, val_loss: num(f[2])?, accuracy: BTreeMap::new() });
            }
            epochs.last_mut().unwrap().accuracy.insert(f[3].to_string(), num(f[4])?);
        }
        let final_epoch = epochs.last().map(|r| r.epoch).ok_or("empty history")?;
        // The stop reason is not part of the CSV; the manifest carries it.
        Ok(RunHistory { epochs, stop_reason: StopReason::MaxEpochs, final_epoch })
    }
}

/// True when each of the last `patience` epochs failed to lower the running
/// best validation loss by at least `delta`. The first epoch always counts
/// as an improvement.
pub fn early_stop_check(val_losses: &[f64], delta: f64, patience: usize) -> bool {
    if val_losses.len() <= patience || patience == 0 {
        return false;
    }
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for &loss in val_losses {
        if best - loss >= delta {
            stale = 0;
        } else {
            stale += 1;
        }
        best = best.min(loss);
    }
    stale >= patience
}

/// An example converted to vocabulary indices.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub id: usize,
    pub source: Vec<usize>,
    /// EOS-terminated target.
    pub target: Vec<usize>,
}

pub fn encode_examples(examples: &[Example], src: &Vocab, tgt: &Vocab) -> Result<Vec<Encoded>, EncodingError> {
    examples
        .iter()
        .map(|e| {
            Ok(Encoded { id: e.id, source: src.encode(&e.source, false)?, target: tgt.encode(&e.target, false)? })
        })
        .collect()
}

/// Exact match: the decoder must emit the target followed by `<eos>`.
pub fn is_exact_match(model: &Seq2Seq, example: &Encoded) -> Result<bool, ModelError> {
    let out = model.greedy_decode(&example.source, model.config().max_decode_len)?;
    Ok(out == example.target)
}

pub fn count_exact(model: &Seq2Seq, examples: &[Encoded]) -> Result<usize, ModelError> {
    let mut hits = 0usize;
    for e in examples {
        hits += is_exact_match(model, e)? as usize;
    }
    Ok(hits)
}

pub fn accuracy_encoded(model: &Seq2Seq, examples: &[Encoded]) -> Result<f64, ModelError> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    Ok(count_exact(model, examples)? as f64 / examples.len() as f64)
}

/// Fraction of `examples` whose greedy decoding equals the target exactly.
pub fn evaluate_accuracy(checkpoint: &Checkpoint, examples: &[Example]) -> Result<f64, TrainError> {
    let enc = encode_examples(examples, checkpoint.source_vocab(), checkpoint.target_vocab())?;
    Ok(accuracy_encoded(&checkpoint.model, &enc)?)
}

/// Mean per-token cross-entropy over a whole set.
pub fn mean_token_loss(model: &Seq2Seq, examples: &[Encoded]) -> Result<f64, ModelError> {
    let (mut sum, mut n) = (0.0, 0usize);
    for e in examples {
        let tf = model.forward_teacher_forced(&e.source, &e.target)?;
        sum += tf.token_losses.iter().sum::<f64>();
        n += tf.token_losses.len();
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Hooks into a training run.
pub trait Observer {
    /// Called with the id of every example right before its gradient is applied.
    fn on_update(&mut self, _example_id: usize) {}
    fn on_epoch(&mut self, _record: &EpochRecord) {}
}

impl Observer for () {}

/// Name of the pooled accuracy over every withheld example.
pub const GENERALIZATION: &str = "generalization";

/// One set of examples whose accuracy is recorded every epoch.
#[derive(Debug, Clone)]
pub struct Tracked {
    pub name: String,
    pub examples: Vec<Encoded>,
    /// Part of the withheld generalization set.
    pub withheld: bool,
}

/// Validation, test, every generalization subset and any reference contexts.
pub fn tracked_subsets(split: &DataSplit, src: &Vocab, tgt: &Vocab) -> Result<Vec<Tracked>, EncodingError> {
    let mut out = vec![
        Tracked { name: "validation".into(), examples: encode_examples(&split.validation, src, tgt)?, withheld: false },
        Tracked { name: "test".into(), examples: encode_examples(&split.test, src, tgt)?, withheld: false },
    ];
    for (name, ex) in &split.generalization {
        out.push(Tracked { name: name.clone(), examples: encode_examples(ex, src, tgt)?, withheld: true });
    }
    for (name, ex) in &split.reference {
        out.push(Tracked { name: name.clone(), examples: encode_examples(ex, src, tgt)?, withheld: false });
    }
    Ok(out)
}

/// Accuracy on each tracked set, plus the pooled [`GENERALIZATION`] entry
/// when anything is withheld.
pub fn tracked_accuracy(model: &Seq2Seq, tracked: &[Tracked]) -> Result<BTreeMap<String, f64>, ModelError> {
    let mut accuracy = BTreeMap::new();
    let (mut hits, mut total) = (0usize, 0usize);
    for t in tracked {
        let h = count_exact(model, &t.examples)?;
        let n = t.examples.len();
        accuracy.insert(t.name.clone(), if n == 0 { 0.0 } else { h as f64 / n as f64 });
        if t.withheld {
            hits += h;
            total += n;
        }
    }
    if total > 0 {
        accuracy.insert(GENERALIZATION.to_string(), hits as f64 / total as f64);
    }
    Ok(accuracy)
}

pub fn train_run(
    config: &TrainConfig,
    split: &DataSplit,
    source_vocab: &Vocab,
    target_vocab: &Vocab,
) -> Result<(Checkpoint, RunHistory), TrainError> {
    train_run_with(config, split, source_vocab, target_vocab, None, &mut ())
}

/// [`train_run`] with an optional injected fault and an observer.
pub fn train_run_with(
    config: &TrainConfig,
    split: &DataSplit,
    source_vocab: &Vocab,
    target_vocab: &Vocab,
    fault: Option<Fault>,
    observer: &mut dyn Observer,
) -> Result<(Checkpoint, RunHistory), TrainError> {
    config.validate()?;
    if config.model.source_vocab_size != source_vocab.len() || config.model.target_vocab_size != target_vocab.len() {
        return Err(TrainError::InvalidConfig(format!(
            "vocabulary sizes {}/{} do not match model config {}/{}",
            source_vocab.len(),
            target_vocab.len(),
            config.model.source_vocab_size,
            config.model.target_vocab_size
        )));
    }
    if split.train.is_empty() || split.validation.is_empty() {
        return Err(TrainError::InvalidConfig("empty train or validation set".into()));
    }

    let mut model = Seq2Seq::new(config.model.clone(), config.seed)?;
    model.inject_fault(fault);
    let train = encode_examples(&split.train, source_vocab, target_vocab)?;
    let tracked = tracked_subsets(split, source_vocab, target_vocab)?;
    let validation = &tracked[0].examples;

    let mut rng = seeded_rng(config.seed, RngStream::Shuffle);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs: Vec<EpochRecord> = Vec::new();
    let mut val_losses = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for &i in &order {
            let ex = &train[i];
            let tf = model.accumulate_gradients(&ex.source, &ex.target)?;
            if !tf.mean_loss.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch,
                    example_id: ex.id,
                    detail: format!("loss {}", tf.mean_loss),
                });
            }
            loss_sum += tf.mean_loss;
            if let Some(c) = config.clip_norm {
                model.params_mut().clip_grad_norm(c);
            }
            observer.on_update(ex.id);
            model
                .params_mut()
                .sgd_update(config.learning_rate)
                .map_err(|e| TrainError::NonFinite { epoch, example_id: ex.id, detail: e.to_string() })?;
        }
        let train_loss = loss_sum / train.len() as f64;
        let val_loss = mean_token_loss(&model, validation)?;
        if !val_loss.is_finite() {
            return Err(TrainError::NonFinite { epoch, example_id: usize::MAX, detail: "validation loss".into() });
        }
        let accuracy = tracked_accuracy(&model, &tracked)?;
        let record = EpochRecord { epoch, train_loss, val_loss, accuracy };
        observer.on_epoch(&record);
        epochs.push(record);
        val_losses.push(val_loss);
        if early_stop_check(&val_losses, config.early_stop_delta, config.early_stop_patience) {
            stop_reason = StopReason::EarlyStop;
            break;
        }
    }

    model.inject_fault(None);
    let final_epoch = epochs.len();
    let checkpoint = Checkpoint::new(model, config.seed, source_vocab.clone(), target_vocab.clone());
    Ok((checkpoint, RunHistory { epochs, stop_reason, final_epoch }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stop_examples() {
        assert!(early_stop_check(&[1.0, 0.999, 0.998, 0.997], 0.005, 3));
        assert!(!early_stop_check(&[1.0, 0.9, 0.8], 0.005, 3));
        assert!(!early_stop_check(&[1.0, 0.999, 0.99, 0.999], 0.005, 3));
        assert!(!early_stop_check(&[1.0], 0.005, 3));
        // Running best, not previous epoch: a bounce back down does not count.
        assert!(early_stop_check(&[1.0, 0.5, 0.9, 0.6, 0.498], 0.005, 3));
    }

    #[test]
    fn history_csv_round_trip() {
        let mut acc = BTreeMap::new();
        acc.insert("test".to_string(), 0.5);
        acc.insert("alice-reflexive".to_string(), 1.0 / 7.0);
        let h = RunHistory {
            epochs: vec![
                EpochRecord { epoch: 1, train_loss: 1.25, val_loss: 0.1 + 0.2, accuracy: acc.clone() },
                EpochRecord { epoch: 2, train_loss: 0.5, val_loss: 0.25, accuracy: acc },
            ],
            stop_reason: StopReason::MaxEpochs,
            final_epoch: 2,
        };
        let csv = h.to_csv();
        assert!(csv.starts_with("epoch,train_loss,val_loss,subset,accuracy\n1,1.25,0.30000000000000004,alice-reflexive,"));
        assert_eq!(RunHistory::from_csv(&csv).unwrap(), h);
    }

    #[test]
    fn config_validation() {
        let m = ModelConfig::new(crate::Unit::Srn, crate::AttentionKind::None, 5, 5);
        let mut c = TrainConfig::new(m, 0);
        assert!(c.validate().is_ok());
        assert!(c.non_paper().is_empty());
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
        c.learning_rate = 0.01;
        c.max_epochs = 0;
        assert!(c.validate().is_err());
        c.max_epochs = 5;
        c.clip_norm = Some(1.0);
        assert_eq!(c.non_paper(), ["max_epochs=5", "clip_norm=1"]);
    }
}

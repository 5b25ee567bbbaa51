//! Training and evaluation: deterministic splits, cross-entropy + Adam
//! mini-batch training with best-validation checkpointing, and metrics with
//! foul as the positive class.

use crate::features::Sample;
use crate::model::{BatchInput, FoulNet, Mode, ModelError};
use crate::nn::adam::Adam;
use crate::nn::layers::softmax_xent;
use crate::types::Label;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("not enough samples: have {have}, need {need}")]
    InsufficientSamples { have: usize, need: usize },
    #[error("empty {0} set")]
    EmptySet(&'static str),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Stop after the first epoch whose validation accuracy reaches this
    /// value (fraction in [0, 1]). `None` trains the full epoch budget.
    pub stop_at_val_acc: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            batch_size: 32,
            epochs: 30,
            seed: 0,
            stop_at_val_acc: None,
        }
    }
}

/// Confusion counts with foul as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

/// Accuracy, precision, and recall as percentages, plus the raw counts.
/// Degenerate 0/0 ratios are reported as 0 and flagged undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub precision_defined: bool,
    pub recall_defined: bool,
    pub confusion: Confusion,
}

impl Metrics {
    pub fn from_confusion(c: Confusion) -> Metrics {
        let total = c.tp + c.fp + c.tn + c.fn_;
        let accuracy = if total == 0 {
            0.0
        } else {
            100.0 * (c.tp + c.tn) as f64 / total as f64
        };
        let precision_defined = c.tp + c.fp > 0;
        let precision = if precision_defined {
            100.0 * c.tp as f64 / (c.tp + c.fp) as f64
        } else {
            0.0
        };
        let recall_defined = c.tp + c.fn_ > 0;
        let recall = if recall_defined {
            100.0 * c.tp as f64 / (c.tp + c.fn_) as f64
        } else {
            0.0
        };
        Metrics {
            accuracy,
            precision,
            recall,
            precision_defined,
            recall_defined,
            confusion: c,
        }
    }

    pub fn from_predictions(predicted: &[Label], actual: &[Label]) -> Metrics {
        assert_eq!(predicted.len(), actual.len());
        let mut c = Confusion {
            tp: 0,
            fp: 0,
            tn: 0,
            fn_: 0,
        };
        for (p, a) in predicted.iter().zip(actual) {
            match (p, a) {
                (Label::Foul, Label::Foul) => c.tp += 1,
                (Label::Foul, Label::NonFoul) => c.fp += 1,
                (Label::NonFoul, Label::NonFoul) => c.tn += 1,
                (Label::NonFoul, Label::Foul) => c.fn_ += 1,
            }
        }
        Metrics::from_confusion(c)
    }

    pub fn table(&self) -> String {
        format!(
            "acc {:.1}%  prec {:.1}%{}  rec {:.1}%{}  (tp {} fp {} tn {} fn {})",
            self.accuracy,
            self.precision,
            if self.precision_defined { "" } else { " (undefined 0/0)" },
            self.recall,
            if self.recall_defined { "" } else { " (undefined 0/0)" },
            self.confusion.tp,
            self.confusion.fp,
            self.confusion.tn,
            self.confusion.fn_,
        )
    }
}

/// Per-epoch training curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochStats>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,train_acc,val_acc\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6}\n",
                e.epoch, e.train_loss, e.val_loss, e.train_acc, e.val_acc
            ));
        }
        out
    }
}

/// Index sets of a deterministic shuffled split, with label balance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    /// (foul, non-foul) counts per split, in train/val/test order.
    pub balance: [(usize, usize); 3],
}

/// Shuffles `0..labels.len()` with the seed and partitions into the three
/// requested sizes.
pub fn split_dataset(
    labels: &[Label],
    sizes: (usize, usize, usize),
    seed: u64,
) -> Result<Split, TrainError> {
    let need = sizes.0 + sizes.1 + sizes.2;
    if labels.len() < need {
        return Err(TrainError::InsufficientSamples {
            have: labels.len(),
            need,
        });
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let train: Vec<usize> = order[..sizes.0].to_vec();
    let val: Vec<usize> = order[sizes.0..sizes.0 + sizes.1].to_vec();
    let test: Vec<usize> = order[sizes.0 + sizes.1..need].to_vec();
    let balance_of = |idx: &[usize]| {
        let fouls = idx.iter().filter(|&&i| labels[i] == Label::Foul).count();
        (fouls, idx.len() - fouls)
    };
    let balance = [balance_of(&train), balance_of(&val), balance_of(&test)];
    Ok(Split {
        seed,
        train,
        val,
        test,
        balance,
    })
}

/// The returned checkpoint is the epoch with the best validation accuracy
/// (earlier epoch wins ties).
#[derive(Debug)]
pub struct TrainOutcome {
    pub best: FoulNet<f32>,
    pub best_epoch: usize,
    pub history: History,
}

fn eval_pass(
    net: &mut FoulNet<f32>,
    set: &[&Sample],
    batch_size: usize,
) -> Result<(f64, Metrics), TrainError> {
    if set.is_empty() {
        return Err(TrainError::EmptySet("eval"));
    }
    let feat = net.feat;
    let mut loss_sum = 0.0;
    let mut predicted = Vec::with_capacity(set.len());
    let mut actual = Vec::with_capacity(set.len());
    for chunk in set.chunks(batch_size) {
        let batch = BatchInput::<f32>::from_samples(chunk, &feat)?;
        let logits = net.forward(&batch, Mode::Eval)?;
        let (loss, _, _) = softmax_xent(&logits, &batch.labels, 2);
        loss_sum += loss * chunk.len() as f64;
        for (row, sample) in logits.chunks(2).zip(chunk) {
            let pred = if row[1] > row[0] { Label::Foul } else { Label::NonFoul };
            predicted.push(pred);
            actual.push(sample.label);
        }
    }
    let metrics = Metrics::from_predictions(&predicted, &actual);
    Ok((loss_sum / set.len() as f64, metrics))
}

/// Mini-batch training with Adam and per-epoch validation in eval mode.
pub fn train(
    mut net: FoulNet<f32>,
    train_set: &[&Sample],
    val_set: &[&Sample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    if train_set.is_empty() {
        return Err(TrainError::EmptySet("train"));
    }
    if val_set.is_empty() {
        return Err(TrainError::EmptySet("validation"));
    }
    let feat = net.feat;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1); // distinct from parameter-init draws
    let mut opt = Adam::new(cfg.lr);
    let mut history = History::default();
    let mut best: Option<(FoulNet<f32>, usize, f64)> = None;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let samples: Vec<&Sample> = chunk.iter().map(|&i| train_set[i]).collect();
            let batch = BatchInput::<f32>::from_samples(&samples, &feat)?;
            net.zero_grads();
            let logits = net.forward(&batch, Mode::Train(&mut rng))?;
            let (loss, dlogits, batch_correct) = softmax_xent(&logits, &batch.labels, 2);
            if !loss.is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    batch: batch_idx,
                    loss,
                });
            }
            net.backward(&dlogits);
            opt.step(&mut net);
            loss_sum += loss * chunk.len() as f64;
            correct += batch_correct;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let train_acc = correct as f64 / train_set.len() as f64;
        let (val_loss, val_metrics) = eval_pass(&mut net, val_set, cfg.batch_size)?;
        let val_acc = val_metrics.accuracy / 100.0;
        history.epochs.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            train_acc,
            val_acc,
        });
        let improved = match &best {
            None => true,
            Some((_, _, best_acc)) => val_acc > *best_acc,
        };
        if improved {
            best = Some((net.clone(), epoch, val_acc));
        }
        if let Some(target) = cfg.stop_at_val_acc {
            if val_acc >= target {
                break;
            }
        }
    }
    let (best, best_epoch, _) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best,
        best_epoch,
        history,
    })
}

/// Deterministic eval-mode pass over the test set.
pub fn evaluate(
    net: &mut FoulNet<f32>,
    test_set: &[&Sample],
    batch_size: usize,
) -> Result<Metrics, TrainError> {
    if test_set.is_empty() {
        return Err(TrainError::EmptySet("test"));
    }
    let (_, metrics) = eval_pass(net, test_set, batch_size)?;
    Ok(metrics)
}

/// Per-sample foul probabilities and predictions, eval mode.
pub fn predict(
    net: &mut FoulNet<f32>,
    set: &[&Sample],
    batch_size: usize,
) -> Result<Vec<(f64, Label)>, TrainError> {
    let feat = net.feat;
    let mut out = Vec::with_capacity(set.len());
    for chunk in set.chunks(batch_size) {
        let batch = BatchInput::<f32>::from_samples(chunk, &feat)?;
        let logits = net.forward(&batch, Mode::Eval)?;
        for p in crate::model::foul_probabilities(&logits) {
            let label = if p >= 0.5 { Label::Foul } else { Label::NonFoul };
            out.push((p, label));
        }
    }
    Ok(out)
}

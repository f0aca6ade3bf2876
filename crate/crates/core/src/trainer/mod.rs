//! Mini-batch training with Adam, global-norm gradient clipping and early
//! stopping on validation log-likelihood.

mod adam;
mod batch;

pub use adam::{clip_gradients, Adam};
pub use batch::{batchify, Batch, PaddedStream};

use std::fmt::Write as _;

use thiserror::Error;

use crate::seq2seq::{ModelError, MultiEncoderModel};
use crate::tensor::{Graph, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at epoch {epoch}, batch {batch}: {reason}")]
    Diverged {
        epoch: usize,
        batch: usize,
        reason: String,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Contract(String),
}

/// One training pair: token ids per source, target ids (no end marker).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub sources: Vec<Vec<usize>>,
    pub target: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub embed_dim: usize,
    pub d_lstm: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            embed_dim: 64,
            d_lstm: 64,
            learning_rate: 1e-3,
            clip_norm: 5.0,
            batch_size: 32,
            patience: 5,
            max_epochs: 30,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let ok = self.embed_dim > 0
            && self.d_lstm > 0
            && self.learning_rate > 0.0
            && self.clip_norm > 0.0
            && self.batch_size > 0
            && self.patience > 0
            && self.max_epochs > 0;
        if ok {
            Ok(())
        } else {
            Err(TrainError::Contract(format!("invalid training configuration {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sentence training NLL over the epoch.
    pub train_loss: f64,
    /// Mean per-sentence validation NLL after the epoch.
    pub valid_nll: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

impl TrainReport {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }

    /// `epoch<TAB>train_loss<TAB>valid_nll` lines.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            let _ = writeln!(out, "{}\t{}\t{}", e.epoch, e.train_loss, e.valid_nll);
        }
        out
    }
}

/// Tracks the best validation score and decides when to stop.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            bad_epochs: 0,
        }
    }

    /// Records an epoch's validation NLL. Returns `(improved, stop)`.
    pub fn observe(&mut self, epoch: usize, nll: f64) -> (bool, bool) {
        let improved = self.best.is_none_or(|(_, b)| nll < b);
        if improved {
            self.best = Some((epoch, nll));
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        (improved, self.bad_epochs >= self.patience)
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }
}

fn split_streams(examples: &[&Example]) -> (Vec<Vec<Vec<usize>>>, Vec<Vec<usize>>) {
    let n = examples.first().map_or(0, |e| e.sources.len());
    let sources = (0..n)
        .map(|i| examples.iter().map(|e| e.sources[i].clone()).collect())
        .collect();
    let targets = examples.iter().map(|e| e.target.clone()).collect();
    (sources, targets)
}

/// Summed NLL of `examples` (no gradient), evaluated in chunks.
pub fn corpus_nll(model: &MultiEncoderModel, examples: &[Example], chunk: usize) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for part in examples.chunks(chunk.max(1)) {
        let refs: Vec<&Example> = part.iter().collect();
        let (sources, targets) = split_streams(&refs);
        let mut g = Graph::new();
        let bound = model.bind(&mut g, false);
        let loss = model.batch_nll(&mut g, &bound, &sources, &targets)?;
        total += g.value(loss).data()[0];
    }
    Ok(total)
}

/// Loss and gradients (one buffer per parameter, `named_params` order) of
/// one batch, with the summed NLL divided by the batch size.
pub fn batch_gradients(model: &MultiEncoderModel, batch: &Batch) -> Result<(f64, Vec<Vec<f64>>), ModelError> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g, true);
    let sources: Vec<Vec<Vec<usize>>> = batch.sources.iter().map(PaddedStream::unpadded).collect();
    let targets = batch.target.unpadded();
    let total = model.batch_nll(&mut g, &bound, &sources, &targets)?;
    let loss = g.scale(total, 1.0 / batch.len() as f64)?;
    g.backward(loss)?;
    let grads = bound
        .vars()
        .iter()
        .map(|&v| {
            g.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; g.value(v).len()])
        })
        .collect();
    Ok((g.value(total).data()[0], grads))
}

/// Trains `model` and returns the parameters of the epoch with the lowest
/// validation NLL.
pub fn train(
    mut model: MultiEncoderModel,
    train_set: &[Example],
    valid_set: &[Example],
    config: &TrainConfig,
) -> Result<(MultiEncoderModel, TrainReport), TrainError> {
    config.validate()?;
    if train_set.is_empty() || valid_set.is_empty() {
        return Err(TrainError::Contract("training and validation sets must be non-empty".into()));
    }
    let mut adam = Adam::new(&model, config.learning_rate);
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = model.clone();
    let mut epochs = Vec::new();
    for epoch in 1..=config.max_epochs {
        let batches = batchify(train_set, config.batch_size, epoch_seed(config.seed, epoch));
        let mut epoch_loss = 0.0;
        for (bi, batch) in batches.iter().enumerate() {
            let diverged = |reason: String| TrainError::Diverged {
                epoch,
                batch: bi,
                reason,
            };
            let (loss, mut grads) = batch_gradients(&model, batch).map_err(|e| match e {
                ModelError::Tensor(TensorError::NonFinite { op }) => diverged(format!("non-finite value in {op}")),
                other => TrainError::Model(other),
            })?;
            if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(diverged(format!("loss {loss}")));
            }
            clip_gradients(&mut grads, config.clip_norm);
            adam.step(&mut model, &grads)?;
            epoch_loss += loss;
        }
        let valid_nll = corpus_nll(&model, valid_set, 64)? / valid_set.len() as f64;
        if !valid_nll.is_finite() {
            return Err(TrainError::Diverged {
                epoch,
                batch: batches.len(),
                reason: "validation NLL is not finite".into(),
            });
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / train_set.len() as f64,
            valid_nll,
        });
        let (improved, stop) = stopper.observe(epoch, valid_nll);
        if improved {
            best = model.clone();
        }
        if stop {
            break;
        }
    }
    let report = TrainReport {
        epochs,
        best_epoch: stopper.best_epoch().expect("at least one epoch ran"),
    };
    Ok((best, report))
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(epoch as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq2seq::ModelConfig;

    fn config() -> ModelConfig {
        ModelConfig {
            source_vocab_sizes: vec![10, 10],
            target_vocab_size: 10,
            embed_dim: 8,
            d_lstm: 8,
        }
    }

    #[test]
    fn early_stopping_rule() {
        let mut s = EarlyStopping::new(1);
        assert_eq!(s.observe(1, 3.0), (true, false));
        assert_eq!(s.observe(2, 3.5), (false, true));
        assert_eq!(s.best_epoch(), Some(1));
        let mut s = EarlyStopping::new(2);
        s.observe(1, 3.0);
        assert_eq!(s.observe(2, 3.0), (false, false));
        assert_eq!(s.observe(3, 2.0), (true, false));
        assert_eq!(s.observe(4, 2.5), (false, false));
        assert_eq!(s.observe(5, 2.5), (false, true));
        assert_eq!(s.best_epoch(), Some(3));
    }

    #[test]
    fn report_tsv() {
        let r = TrainReport {
            epochs: vec![
                EpochRecord {
                    epoch: 1,
                    train_loss: 2.5,
                    valid_nll: 2.25,
                },
                EpochRecord {
                    epoch: 2,
                    train_loss: 1.5,
                    valid_nll: 3.0,
                },
            ],
            best_epoch: 1,
        };
        assert_eq!(r.to_tsv(), "1\t2.5\t2.25\n2\t1.5\t3\n");
        assert_eq!(r.best().valid_nll, 2.25);
    }

    #[test]
    fn memorizes_one_sentence() {
        let ex = Example {
            sources: vec![vec![5, 6, 7], vec![8, 9]],
            target: vec![9, 7, 5, 6],
        };
        let model = MultiEncoderModel::init(config(), 3).unwrap();
        let cfg = TrainConfig {
            embed_dim: 8,
            d_lstm: 8,
            learning_rate: 5e-2,
            batch_size: 1,
            patience: 1000,
            max_epochs: 200,
            ..TrainConfig::default()
        };
        let (best, report) = train(model, std::slice::from_ref(&ex), std::slice::from_ref(&ex), &cfg).unwrap();
        assert!(report.epochs.last().unwrap().train_loss < 0.1, "{:?}", report.epochs.last());
        let hyp = best.translate(&ex.sources, 20).unwrap();
        assert_eq!(hyp.content(), ex.target.as_slice());
    }

    #[test]
    fn training_is_deterministic_and_keeps_best() {
        let data: Vec<Example> = (0..12)
            .map(|i| Example {
                sources: vec![vec![5 + i % 4, 6], vec![7 + i % 3]],
                target: vec![5 + i % 5, 8],
            })
            .collect();
        let cfg = TrainConfig {
            embed_dim: 8,
            d_lstm: 8,
            batch_size: 5,
            max_epochs: 4,
            ..TrainConfig::default()
        };
        let run = || train(MultiEncoderModel::init(config(), 7).unwrap(), &data, &data[..4], &cfg).unwrap();
        let (m1, r1) = run();
        let (m2, r2) = run();
        assert_eq!(r1, r2);
        assert_eq!(m1, m2);
        let best = r1.best().valid_nll;
        assert!(r1.epochs.iter().all(|e| best <= e.valid_nll));
        let check = corpus_nll(&m1, &data[..4], 3).unwrap() / 4.0;
        assert!((check - best).abs() < 1e-9);
    }

    #[test]
    fn rejects_empty_sets() {
        let model = MultiEncoderModel::init(config(), 1).unwrap();
        let ex = Example {
            sources: vec![vec![5], vec![6]],
            target: vec![7],
        };
        assert!(train(model, &[], &[ex], &TrainConfig::default()).is_err());
    }
}

//! Pretraining of the shared model on every language pair.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{batch_iter, Batch, ParallelCorpus};
use crate::error::{Error, Result};
use crate::model::{loss_and_grad, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-3,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    pub fn new(cfg: AdamConfig, n: usize) -> Self {
        Self {
            cfg,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.step);
        let c2 = 1.0 - beta2.powi(self.step);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let mhat = *m / c1;
            let vhat = *v / c2;
            *p -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean batch loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ a.wrapping_mul(0xBF58_476D_1CE4_E5B9)
        ^ b.wrapping_mul(0x94D0_49BB_1331_11EB)
}

/// One epoch's batch order: per-corpus streams interleaved round-robin, with
/// the order of corpora inside each round drawn from `seed`.
pub fn interleave(corpora: &[ParallelCorpus], batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Batch>> {
    let mut streams = corpora
        .iter()
        .enumerate()
        .map(|(i, c)| batch_iter(c, batch_size, mix(seed, epoch as u64 + 1, i as u64 + 1)).map(Vec::into_iter))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, epoch as u64 + 1, 0));
    let mut out = Vec::new();
    loop {
        let mut order: Vec<usize> = (0..streams.len()).collect();
        order.shuffle(&mut rng);
        let before = out.len();
        for i in order {
            if let Some(b) = streams[i].next() {
                out.push(b);
            }
        }
        if out.len() == before {
            return Ok(out);
        }
    }
}

/// Trains with Adam and returns the updated parameters with per-epoch
/// losses. `log` receives `(epoch, mean_loss)` after each epoch.
pub fn train_with_log(
    params: &ParamStore,
    corpora: &[ParallelCorpus],
    cfg: &TrainConfig,
    mut log: impl FnMut(usize, f64),
) -> Result<(ParamStore, TrainReport)> {
    if corpora.is_empty() {
        return Err(Error::Empty("no training corpora".into()));
    }
    let mut params = params.clone();
    let mut adam = Adam::new(cfg.adam, params.len());
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let batches = interleave(corpora, cfg.batch_size, cfg.seed, epoch)?;
        let mut sum = 0.0;
        for (bi, batch) in batches.iter().enumerate() {
            let (loss, grad) = loss_and_grad(&params, batch).map_err(|e| match e {
                Error::NonFinite(_) => Error::Divergence {
                    epoch,
                    batch: bi,
                    loss: f64::NAN,
                },
                other => other,
            })?;
            adam.update(params.values_mut(), grad.as_slice());
            if params.values().iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { epoch, batch: bi, loss });
            }
            sum += loss;
        }
        let mean = sum / batches.len() as f64;
        log(epoch, mean);
        epoch_losses.push(mean);
    }
    Ok((params, TrainReport { epoch_losses }))
}

pub fn train(params: &ParamStore, corpora: &[ParallelCorpus], cfg: &TrainConfig) -> Result<(ParamStore, TrainReport)> {
    train_with_log(params, corpora, cfg, |_, _| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{SentencePair, Vocab};
    use crate::model::{init_model, ModelConfig};

    fn setup() -> (ParamStore, Vec<ParallelCorpus>) {
        let vocab = Vocab::from_tokens(["a", "b", "c", "d", "x", "y"], &["en"]).unwrap();
        let tag = vocab.tag_id("en").unwrap();
        let mk = |pair: &str, src: [&str; 2]| {
            let sentences = (0..12)
                .map(|i| SentencePair {
                    src: vec![vocab.id(src[i % 2]), vocab.id(src[(i + 1) % 2])],
                    tgt: vec![tag, 1, vocab.id(["x", "y"][i % 2]), 2],
                })
                .collect();
            ParallelCorpus::new(pair.parse().unwrap(), sentences, vocab.len()).unwrap()
        };
        let corpora = vec![mk("aa-en", ["a", "b"]), mk("bb-en", ["c", "d"])];
        let params = init_model(&ModelConfig {
            vocab_size: vocab.len(),
            embed_dim: 8,
            hidden_dim: 8,
            num_heads: 1,
            max_len: 4,
            seed: 2,
        })
        .unwrap();
        (params, corpora)
    }

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let (p, c) = setup();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            adam: AdamConfig {
                lr: 0.0,
                ..Default::default()
            },
            seed: 1,
        };
        let (out, _) = train(&p, &c, &cfg).unwrap();
        assert_eq!(out.content_hash(), p.content_hash());
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let (p, c) = setup();
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 4,
            seed: 9,
            ..Default::default()
        };
        let (a, ra) = train(&p, &c, &cfg).unwrap();
        let (b, rb) = train(&p, &c, &cfg).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        assert_eq!(ra, rb);
        assert!(ra.epoch_losses.last() < ra.epoch_losses.first());
        assert!(*ra.epoch_losses.last().unwrap() < (p.config().vocab_size as f64).ln());
    }

    #[test]
    fn interleave_covers_every_batch_round_robin() {
        let (_, c) = setup();
        let batches = interleave(&c, 5, 3, 0).unwrap();
        // 12 sentences / 5 per batch = 3 batches per corpus
        assert_eq!(batches.len(), 6);
        // each round of two contains one batch from each corpus
        for round in batches.chunks(2) {
            let a = round.iter().filter(|b| b.examples[0].src.contains(&7)).count();
            assert_eq!(a, 1);
        }
    }

    #[test]
    fn no_corpora_is_an_error() {
        let (p, _) = setup();
        assert!(train(&p, &[], &TrainConfig::default()).is_err());
    }

    #[test]
    fn huge_lr_reports_divergence_or_trains() {
        let (p, c) = setup();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 4,
            adam: AdamConfig {
                lr: f64::INFINITY,
                ..Default::default()
            },
            seed: 1,
        };
        assert!(matches!(train(&p, &c, &cfg), Err(Error::Divergence { epoch: 0, .. })));
    }
}

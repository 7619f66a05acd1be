//! Embedding-space similarity between an auxiliary corpus and a target
//! corpus.
//!
//! A sentence is embedded as the mean of its tokens' rows in the model's
//! token-embedding table. Samples `T` (auxiliary) and `S` (target) of the
//! source sides are drawn; every `t` in `T` scores the mean of its `top_n`
//! highest cosine similarities against `S`, and the result is the mean over
//! `T`.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{ParallelCorpus, TokenId};
use crate::error::{Error, Result};
use crate::model::ParamStore;

pub fn embed_sentence(params: &ParamStore, sentence: &[TokenId]) -> Result<Vec<f64>> {
    if sentence.is_empty() {
        return Err(Error::Empty("sentence".into()));
    }
    let cfg = params.config();
    let d = cfg.embed_dim;
    let table = params
        .segment("tok_emb")
        .expect("every layout has a token embedding")
        .offset;
    let mut out = vec![0.0; d];
    for &id in sentence {
        if id as usize >= cfg.vocab_size {
            return Err(Error::TokenOutOfRange {
                id,
                vocab_size: cfg.vocab_size,
            });
        }
        let row = &params.values()[table + id as usize * d..][..d];
        for (o, r) in out.iter_mut().zip(row) {
            *o += r;
        }
    }
    let n = sentence.len() as f64;
    out.iter_mut().for_each(|v| *v /= n);
    Ok(out)
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Per-`t` mean of its `top_n` best cosine similarities against `s`, and the
/// overall mean. `top_n` is clamped to `s.len()`.
pub fn top_n_similarity(t: &[Vec<f64>], s: &[Vec<f64>], top_n: usize) -> Result<(f64, Vec<f64>)> {
    if t.is_empty() || s.is_empty() {
        return Err(Error::Empty("similarity sample".into()));
    }
    if top_n == 0 {
        return Err(Error::Invalid("top_n must be at least 1".into()));
    }
    let n = top_n.min(s.len());
    let rows: Vec<f64> = t
        .iter()
        .map(|ti| {
            let mut sims: Vec<f64> = s.iter().map(|si| cosine(ti, si)).collect();
            sims.sort_by(|a, b| b.total_cmp(a));
            sims[..n].iter().sum::<f64>() / n as f64
        })
        .collect();
    let score = rows.iter().sum::<f64>() / rows.len() as f64;
    Ok((score, rows))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataSimConfig {
    pub sample_frac: f64,
    pub top_n: usize,
    pub seed: u64,
}

impl Default for DataSimConfig {
    fn default() -> Self {
        Self {
            sample_frac: 0.10,
            top_n: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSimResult {
    pub score: f64,
    /// Sampled auxiliary sentence indices, ascending.
    pub aux_sample: Vec<usize>,
    /// Sampled target sentence indices, ascending.
    pub target_sample: Vec<usize>,
    /// `top_n` after clamping to the target sample size.
    pub top_n: usize,
    /// Mean top-n similarity of each sampled auxiliary sentence.
    pub per_sentence: Vec<f64>,
}

impl DataSimResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("aux_index,top_n_mean\n");
        for (i, v) in self.aux_sample.iter().zip(&self.per_sentence) {
            s.push_str(&format!("{i},{v:?}\n"));
        }
        s
    }
}

/// `max(1, floor(frac * n))` seeded indices without replacement, sorted.
pub fn sample_indices(n: usize, frac: f64, seed: u64) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::Empty("corpus to sample".into()));
    }
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(Error::Invalid(format!("sample fraction {frac} outside (0, 1]")));
    }
    let k = ((frac * n as f64 + 1e-9).floor() as usize).clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = index::sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Both samples are drawn with `cfg.seed`, so a corpus compared with itself
/// yields identical samples.
pub fn data_similarity(
    aux: &ParallelCorpus,
    target: &ParallelCorpus,
    params: &ParamStore,
    cfg: &DataSimConfig,
) -> Result<DataSimResult> {
    let aux_sample = sample_indices(aux.len(), cfg.sample_frac, cfg.seed)?;
    let target_sample = sample_indices(target.len(), cfg.sample_frac, cfg.seed)?;
    let embed_all = |c: &ParallelCorpus, idx: &[usize]| -> Result<Vec<Vec<f64>>> {
        idx.iter()
            .map(|&i| embed_sentence(params, &c.sentences()[i].src))
            .collect()
    };
    let t = embed_all(aux, &aux_sample)?;
    let s = embed_all(target, &target_sample)?;
    let (score, per_sentence) = top_n_similarity(&t, &s, cfg.top_n)?;
    Ok(DataSimResult {
        score,
        top_n: cfg.top_n.min(s.len()),
        aux_sample,
        target_sample,
        per_sentence,
    })
}

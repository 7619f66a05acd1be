//! Diagonal empirical Fisher information per language pair.
//!
//! For one pass over the corpus split into `J` mini-batches, with `g_j` the
//! gradient of the batch-mean loss, the estimate is `F = sum_j g_j^2 / J`
//! (element-wise). Parameters are never updated during estimation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::corpus::{batch_iter, Batch, LangPairId, ParallelCorpus};
use crate::error::{Error, Result};
use crate::model::{backward, parse_segment_line, Layout, ParamStore, SectionId};

#[derive(Debug, Clone, PartialEq)]
pub struct FimVector {
    values: Vec<f64>,
    layout: Layout,
    model_hash: String,
    pair: LangPairId,
    num_batches: usize,
}

impl FimVector {
    pub fn new(
        values: Vec<f64>,
        layout: Layout,
        model_hash: String,
        pair: LangPairId,
        num_batches: usize,
    ) -> Result<Self> {
        if values.len() != layout.total_len() {
            return Err(Error::LengthMismatch {
                left: values.len(),
                right: layout.total_len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Invalid(format!(
                "fisher entry {i} = {} is not finite and non-negative",
                values[i]
            )));
        }
        Ok(Self {
            values,
            layout,
            model_hash,
            pair,
            num_batches,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn model_hash(&self) -> &str {
        &self.model_hash
    }

    pub fn pair(&self) -> &LangPairId {
        &self.pair
    }

    pub fn num_batches(&self) -> usize {
        self.num_batches
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Multiplies every entry by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(
            self.values.iter().map(|v| v * c).collect(),
            self.layout.clone(),
            self.model_hash.clone(),
            self.pair.clone(),
            self.num_batches,
        )
    }

    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.values.len() * 24);
        s.push_str(FIM_MAGIC);
        s.push('\n');
        let _ = writeln!(s, "pair = {}", self.pair);
        let _ = writeln!(s, "model_hash = {}", self.model_hash);
        let _ = writeln!(s, "num_batches = {}", self.num_batches);
        let _ = writeln!(s, "layout_digest = {}", self.layout.digest());
        let _ = writeln!(s, "layout {}", self.layout.segments().len());
        s.push_str(&self.layout.to_text());
        let _ = writeln!(s, "values {}", self.values.len());
        for v in &self.values {
            let _ = writeln!(s, "{v:?}");
        }
        s
    }

    pub fn from_text(text: &str, label: &str) -> Result<Self> {
        let bad = |msg: String| Error::format(label, msg);
        let mut lines = text.lines();
        if lines.next() != Some(FIM_MAGIC) {
            return Err(bad("not a pseudofam FIM file".into()));
        }
        let mut kv = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad(format!("missing {key}")))?;
            match line.split_once(" = ") {
                Some((k, v)) if k == key => Ok(v.to_string()),
                _ => Err(bad(format!("expected `{key} = ...`, found {line:?}"))),
            }
        };
        let pair: LangPairId = kv("pair")?.parse()?;
        let model_hash = kv("model_hash")?;
        let num_batches = kv("num_batches")?
            .parse()
            .map_err(|_| bad("num_batches is not an integer".into()))?;
        let digest = kv("layout_digest")?;
        let mut count = |key: &str| -> Result<usize> {
            lines
                .next()
                .and_then(|l| l.strip_prefix(key))
                .and_then(|n| n.trim().parse().ok())
                .ok_or_else(|| bad(format!("expected `{key} <count>`")))
        };
        let nseg = count("layout")?;
        let mut segments = Vec::with_capacity(nseg);
        for _ in 0..nseg {
            let line = lines.next().ok_or_else(|| bad("truncated layout".into()))?;
            segments.push(parse_segment_line(line)?);
        }
        let layout = Layout::from_segments(segments)?;
        if layout.digest() != digest {
            return Err(bad("layout digest does not match the layout".into()));
        }
        let n = lines
            .next()
            .and_then(|l| l.strip_prefix("values"))
            .and_then(|n| n.trim().parse::<usize>().ok())
            .ok_or_else(|| bad("expected `values <count>`".into()))?;
        let values = lines
            .by_ref()
            .take(n)
            .map(|l| l.parse::<f64>().map_err(|_| bad(format!("bad value {l:?}"))))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != n {
            return Err(bad("truncated values".into()));
        }
        if lines.next().is_some() {
            return Err(bad("trailing data after values".into()));
        }
        Self::new(values, layout, model_hash, pair, num_batches).map_err(|e| bad(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, &path.display().to_string())
    }

    /// Loads and checks that the FIM was estimated on `params`.
    pub fn load_for(path: impl AsRef<Path>, params: &ParamStore) -> Result<Self> {
        let fim = Self::load(path)?;
        fim.check_model(params)?;
        Ok(fim)
    }

    pub fn check_model(&self, params: &ParamStore) -> Result<()> {
        let expected = params.content_hash();
        if self.model_hash != expected {
            return Err(Error::HashMismatch {
                expected,
                found: self.model_hash.clone(),
            });
        }
        Ok(())
    }
}

const FIM_MAGIC: &str = "pseudofam-fim 1";

/// `sum_j g_j^2 / J` over the given batches.
pub fn accumulate_fim(params: &ParamStore, pair: LangPairId, batches: &[Batch]) -> Result<FimVector> {
    if batches.is_empty() {
        return Err(Error::Empty(format!("no mini-batches for {pair}")));
    }
    let denom = batches.len() as f64;
    let mut acc = vec![0.0; params.len()];
    for batch in batches {
        let g = backward(params, batch)?;
        for (a, gi) in acc.iter_mut().zip(g.as_slice()) {
            *a += gi * gi / denom;
        }
    }
    FimVector::new(acc, params.layout().clone(), params.content_hash(), pair, batches.len())
}

/// One epoch of Fisher estimation over `corpus` with seeded batching.
pub fn estimate_fim(params: &ParamStore, corpus: &ParallelCorpus, batch_size: usize, seed: u64) -> Result<FimVector> {
    let batches = batch_iter(corpus, batch_size, seed)?;
    accumulate_fim(params, corpus.pair().clone(), &batches)
}

/// Estimates every corpus over a shared read-only model on up to `jobs`
/// threads. Output order follows `corpora`.
pub fn estimate_fims(
    params: &ParamStore,
    corpora: &[ParallelCorpus],
    batch_size: usize,
    seed: u64,
    jobs: usize,
) -> Result<Vec<FimVector>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    pool.install(|| {
        corpora
            .par_iter()
            .map(|c| estimate_fim(params, c, batch_size, seed))
            .collect()
    })
}

/// The fisher values of a subset of sections, in parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct FimView {
    pub pair: LangPairId,
    pub model_hash: String,
    pub layout_digest: String,
    pub sections: Vec<SectionId>,
    pub values: Vec<f64>,
}

impl FimView {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn restrict_sections(fim: &FimVector, sections: &[SectionId]) -> Result<FimView> {
    if sections.is_empty() {
        return Err(Error::Invalid("section filter is empty".into()));
    }
    let mut sections = sections.to_vec();
    sections.sort_unstable();
    sections.dedup();
    let values = fim
        .layout
        .segments()
        .iter()
        .filter(|s| sections.contains(&s.section))
        .flat_map(|s| fim.values[s.range()].iter().copied())
        .collect();
    Ok(FimView {
        pair: fim.pair.clone(),
        model_hash: fim.model_hash.clone(),
        layout_digest: fim.layout.digest(),
        sections,
        values,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FisherMask {
    pub bits: Vec<bool>,
    pub k_fraction: f64,
    pub sections: Vec<SectionId>,
}

impl FisherMask {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }
}

pub const DEFAULT_K: f64 = 0.4;

/// `ceil(k * n)`, clamped to `1..=n`. Products within 1e-9 (relative) of an
/// integer snap to it, so `0.55 * 100` (55.00000000000001 in f64) gives 55.
pub fn top_k_count(k_fraction: f64, n: usize) -> usize {
    let x = k_fraction * n as f64;
    let r = x.round();
    let c = if r >= 1.0 && (x - r).abs() <= 1e-9 * x.max(1.0) {
        r
    } else {
        x.ceil()
    };
    (c as usize).clamp(1, n.max(1))
}

fn check_k(k_fraction: f64) -> Result<()> {
    if !(k_fraction > 0.0 && k_fraction <= 1.0) {
        return Err(Error::Invalid(format!("k_fraction {k_fraction} outside (0, 1]")));
    }
    Ok(())
}

/// Indices of the `ceil(k * n)` largest values; ties go to the lower index.
fn top_indices(values: &[f64], k_fraction: f64) -> Result<Vec<usize>> {
    check_k(k_fraction)?;
    if values.is_empty() {
        return Err(Error::Empty("fisher view".into()));
    }
    let count = top_k_count(k_fraction, values.len());
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.truncate(count);
    Ok(order)
}

pub fn top_k_mask(view: &FimView, k_fraction: f64) -> Result<FisherMask> {
    let mut bits = vec![false; view.len()];
    for i in top_indices(&view.values, k_fraction)? {
        bits[i] = true;
    }
    Ok(FisherMask {
        bits,
        k_fraction,
        sections: view.sections.clone(),
    })
}

/// Where the top-K fisher parameters of the full model live.
#[derive(Debug, Clone, PartialEq)]
pub struct SectionReport {
    pub pair: LangPairId,
    pub k_fraction: f64,
    /// Fraction of the selected parameters in each section; sums to 1.
    pub fractions: BTreeMap<SectionId, f64>,
}

impl SectionReport {
    pub fn ffn_share(&self) -> f64 {
        SectionId::FFN.iter().map(|s| self.fractions[s]).sum()
    }
}

pub fn fim_distribution_report(fim: &FimVector, k_fraction: f64) -> Result<SectionReport> {
    let top = top_indices(&fim.values, k_fraction)?;
    let owner = fim.layout.section_of_each();
    let mut counts: BTreeMap<SectionId, usize> = SectionId::ALL.iter().map(|&s| (s, 0)).collect();
    for i in &top {
        *counts.get_mut(&owner[*i]).expect("all sections present") += 1;
    }
    let total = top.len() as f64;
    Ok(SectionReport {
        pair: fim.pair.clone(),
        k_fraction,
        fractions: counts.into_iter().map(|(s, c)| (s, c as f64 / total)).collect(),
    })
}

/// `pair,Emb,E_a,E_f,D_a,D_c,D_f,Out,FFN` rows, one per report.
pub fn report_csv(reports: &[SectionReport]) -> String {
    let mut s = String::from("pair,k");
    for sec in SectionId::ALL {
        s.push(',');
        s.push_str(sec.label());
    }
    s.push_str(",FFN\n");
    for r in reports {
        let _ = write!(s, "{},{}", r.pair, r.k_fraction);
        for sec in SectionId::ALL {
            let _ = write!(s, ",{}", r.fractions[&sec]);
        }
        let _ = writeln!(s, ",{}", r.ffn_share());
    }
    s
}

//! A one-layer encoder-decoder translation model over a flat parameter
//! vector.
//!
//! Parameters live in a single `Vec<f64>`; the [`Layout`] names contiguous
//! segments and tags each with the [`SectionId`] it belongs to. The layout is
//! a pure function of the [`ModelConfig`].

mod checkpoint;
mod net;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use net::{backward, forward_loss, loss_and_grad};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SectionId {
    /// Token and position embeddings.
    Emb,
    /// Encoder self-attention.
    EncAttn,
    /// Encoder feed-forward.
    EncFfn,
    /// Decoder self-attention.
    DecSelfAttn,
    /// Decoder cross-attention.
    DecCrossAttn,
    /// Decoder feed-forward.
    DecFfn,
    /// Output projection.
    Out,
}

impl SectionId {
    pub const ALL: [SectionId; 7] = [
        SectionId::Emb,
        SectionId::EncAttn,
        SectionId::EncFfn,
        SectionId::DecSelfAttn,
        SectionId::DecCrossAttn,
        SectionId::DecFfn,
        SectionId::Out,
    ];

    pub const FFN: [SectionId; 2] = [SectionId::EncFfn, SectionId::DecFfn];

    pub fn label(self) -> &'static str {
        match self {
            SectionId::Emb => "Emb",
            SectionId::EncAttn => "E_a",
            SectionId::EncFfn => "E_f",
            SectionId::DecSelfAttn => "D_a",
            SectionId::DecCrossAttn => "D_c",
            SectionId::DecFfn => "D_f",
            SectionId::Out => "Out",
        }
    }

    /// Parses `ffn`, `all`, or a comma-separated list of section labels.
    pub fn parse_filter(s: &str) -> Result<Vec<SectionId>> {
        let mut out: Vec<SectionId> = match s.trim() {
            "ffn" | "FFN" => SectionId::FFN.to_vec(),
            "all" | "ALL" => SectionId::ALL.to_vec(),
            list => list.split(',').map(|t| t.trim().parse()).collect::<Result<_>>()?,
        };
        out.sort_unstable();
        out.dedup();
        if out.is_empty() {
            return Err(Error::Invalid("empty section filter".into()));
        }
        Ok(out)
    }

    pub fn filter_label(sections: &[SectionId]) -> String {
        let mut s = sections.to_vec();
        s.sort_unstable();
        s.dedup();
        if s == SectionId::FFN {
            "ffn".into()
        } else if s == SectionId::ALL {
            "all".into()
        } else {
            s.iter().map(|x| x.label()).collect::<Vec<_>>().join(",")
        }
    }
}

impl fmt::Display for SectionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SectionId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SectionId::ALL
            .into_iter()
            .find(|x| x.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Invalid(format!("unknown section {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub section: SectionId,
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

impl Segment {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len
    }

    /// Biases are the segments whose last name component starts with `b`.
    pub fn is_bias(&self) -> bool {
        self.name.rsplit('.').next().is_some_and(|last| last.starts_with('b'))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    segments: Vec<Segment>,
}

impl Layout {
    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_len(&self) -> usize {
        self.segments.last().map_or(0, |s| s.offset + s.len)
    }

    pub fn section_len(&self, section: SectionId) -> usize {
        self.segments
            .iter()
            .filter(|s| s.section == section)
            .map(|s| s.len)
            .sum()
    }

    /// Section of every parameter index.
    pub fn section_of_each(&self) -> Vec<SectionId> {
        let mut out = Vec::with_capacity(self.total_len());
        for s in &self.segments {
            out.extend(std::iter::repeat_n(s.section, s.len));
        }
        out
    }

    /// Canonical text form, one `section name offset len` line per segment.
    pub fn to_text(&self) -> String {
        self.segments
            .iter()
            .map(|s| format!("{} {} {} {}\n", s.section, s.name, s.offset, s.len))
            .collect()
    }

    pub fn digest(&self) -> String {
        hex_digest(self.to_text().as_bytes())
    }

    pub(crate) fn from_segments(segments: Vec<Segment>) -> Result<Self> {
        let mut next = 0;
        for s in &segments {
            if s.offset != next {
                return Err(Error::Invalid(format!(
                    "segment {} starts at {} but previous ended at {next}",
                    s.name, s.offset
                )));
            }
            next += s.len;
        }
        Ok(Self { segments })
    }
}

pub(crate) fn parse_segment_line(line: &str) -> Result<Segment> {
    let bad = || Error::Invalid(format!("bad layout line {line:?}"));
    match line.split(' ').collect::<Vec<_>>().as_slice() {
        [section, name, offset, len] => Ok(Segment {
            section: section.parse()?,
            name: name.to_string(),
            offset: offset.parse().map_err(|_| bad())?,
            len: len.parse().map_err(|_| bad())?,
        }),
        _ => Err(bad()),
    }
}

/// Sorted indices of every parameter that belongs to `section`.
pub fn section_slice(layout: &Layout, section: SectionId) -> Vec<usize> {
    layout
        .segments
        .iter()
        .filter(|s| s.section == section)
        .flat_map(Segment::range)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 200,
            embed_dim: 16,
            hidden_dim: 32,
            num_heads: 1,
            max_len: 16,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("num_heads", self.num_heads),
            ("max_len", self.max_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Invalid(format!("{name} must be positive")));
        }
        if !self.embed_dim.is_multiple_of(self.num_heads) {
            return Err(Error::Invalid(format!(
                "embed_dim {} not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        net::NetIndex::build(self).1
    }
}

/// Flat parameter vector of the gradient's model.
#[derive(Debug, Clone, PartialEq)]
pub struct GradVector(pub Vec<f64>);

impl GradVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    config: ModelConfig,
    layout: Layout,
    values: Vec<f64>,
}

impl ParamStore {
    pub(crate) fn from_parts(config: ModelConfig, layout: Layout, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if layout != config.layout() {
            return Err(Error::Invalid("layout does not match the model config".into()));
        }
        if values.len() != layout.total_len() {
            return Err(Error::LengthMismatch {
                left: values.len(),
                right: layout.total_len(),
            });
        }
        Ok(Self { config, layout, values })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.layout.segments.iter().find(|s| s.name == name)
    }

    pub(crate) fn header_text(&self) -> String {
        let c = &self.config;
        format!(
            "vocab_size = {}\nembed_dim = {}\nhidden_dim = {}\nnum_heads = {}\nmax_len = {}\nseed = {}\n",
            c.vocab_size, c.embed_dim, c.hidden_dim, c.num_heads, c.max_len, c.seed
        )
    }

    /// SHA-256 over config, layout and the exact bit patterns of the values.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.header_text().as_bytes());
        h.update(self.layout.to_text().as_bytes());
        for v in &self.values {
            h.update(v.to_bits().to_le_bytes());
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Seeded uniform(-0.1, 0.1) weights, zero biases.
pub fn init_model(config: &ModelConfig) -> Result<ParamStore> {
    config.validate()?;
    let layout = config.layout();
    let mut values = vec![0.0; layout.total_len()];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for seg in layout.segments() {
        if !seg.is_bias() {
            for v in &mut values[seg.range()] {
                *v = rng.gen_range(-0.1..0.1);
            }
        }
    }
    ParamStore::from_parts(*config, layout, values)
}

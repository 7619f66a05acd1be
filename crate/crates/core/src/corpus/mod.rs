//! Parallel corpora, vocabularies and mini-batch streams.
//!
//! Corpus files are UTF-8 TSV: one sentence pair per line, `source<TAB>target`,
//! tokens separated by whitespace. Target sequences are stored as
//! `[tag(target_lang), BOS, tokens.., EOS]` so one shared model can serve
//! every language pair.

mod synth;
mod vocab;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use synth::{synth_generate, PhyloNode, PhyloSpec, SynthCorpora};
pub use vocab::{build_vocab, build_vocab_from_lines, Vocab, BOS, EOS, PAD, UNK};

pub type TokenId = u32;

/// A translation direction, written `src-tgt` (for example `aa-en`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LangPairId {
    source: String,
    target: String,
}

pub(crate) fn validate_lang_code(code: &str) -> Result<()> {
    if code.is_empty() {
        return Err(Error::Invalid("empty language code".into()));
    }
    if !code.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return Err(Error::Invalid(format!(
            "language code {code:?} must be ASCII alphanumeric"
        )));
    }
    Ok(())
}

impl LangPairId {
    pub fn new(source: impl Into<String>, target: impl Into<String>) -> Result<Self> {
        let source = source.into();
        let target = target.into();
        validate_lang_code(&source)?;
        validate_lang_code(&target)?;
        if source == target {
            return Err(Error::Invalid(format!(
                "source and target language are both {source:?}"
            )));
        }
        Ok(Self { source, target })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn target(&self) -> &str {
        &self.target
    }

    pub fn code(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for LangPairId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.source, self.target)
    }
}

impl FromStr for LangPairId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once('-') {
            Some((src, tgt)) if !tgt.contains('-') => LangPairId::new(src, tgt),
            _ => Err(Error::Invalid(format!(
                "language pair {s:?} is not of the form src-tgt"
            ))),
        }
    }
}

impl TryFrom<String> for LangPairId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LangPairId> for String {
    fn from(p: LangPairId) -> String {
        p.to_string()
    }
}

/// One tokenized sentence pair. `tgt` already carries the language tag,
/// BOS and EOS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub src: Vec<TokenId>,
    pub tgt: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelCorpus {
    pair: LangPairId,
    sentences: Vec<SentencePair>,
}

impl ParallelCorpus {
    /// Checks that every sequence is non-empty and every id is below
    /// `vocab_size`.
    pub fn new(pair: LangPairId, sentences: Vec<SentencePair>, vocab_size: usize) -> Result<Self> {
        for (i, s) in sentences.iter().enumerate() {
            if s.src.is_empty() || s.tgt.is_empty() {
                return Err(Error::Invalid(format!("sentence {i} has an empty side")));
            }
            if let Some(&id) = s.src.iter().chain(&s.tgt).find(|&&id| id as usize >= vocab_size) {
                return Err(Error::TokenOutOfRange { id, vocab_size });
            }
        }
        Ok(Self { pair, sentences })
    }

    pub fn pair(&self) -> &LangPairId {
        &self.pair
    }

    pub fn sentences(&self) -> &[SentencePair] {
        &self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Maps ids back to tokens, dropping the tag/BOS/EOS framing of the target.
    pub fn detokenize(&self, vocab: &Vocab) -> Vec<(Vec<String>, Vec<String>)> {
        let strip = |ids: &[TokenId]| -> Vec<String> { ids.iter().map(|&id| vocab.token(id).to_string()).collect() };
        self.sentences
            .iter()
            .map(|s| {
                let body = if s.tgt.len() >= 3 {
                    &s.tgt[2..s.tgt.len() - 1]
                } else {
                    &[][..]
                };
                (strip(&s.src), strip(body))
            })
            .collect()
    }
}

/// Untokenized corpus as produced by the synthetic generator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawParallelCorpus {
    pub pair: LangPairId,
    pub lines: Vec<(Vec<String>, Vec<String>)>,
}

impl RawParallelCorpus {
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (src, tgt) in &self.lines {
            out.push_str(&src.join(" "));
            out.push('\t');
            out.push_str(&tgt.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn tokenize(&self, vocab: &Vocab) -> Result<ParallelCorpus> {
        parse_parallel(&self.to_tsv(), &self.pair.to_string(), self.pair.clone(), vocab)
    }
}

/// Parses TSV text into a tokenized corpus. `label` names the source in
/// error messages.
pub fn parse_parallel(text: &str, label: &str, pair: LangPairId, vocab: &Vocab) -> Result<ParallelCorpus> {
    let tag = vocab
        .tag_id(pair.target())
        .ok_or_else(|| Error::Invalid(format!("vocabulary has no tag for target language {:?}", pair.target())))?;
    let mut sentences = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let parse_err = |msg: &str| Error::Parse {
            path: label.to_string(),
            line: lineno,
            msg: msg.to_string(),
        };
        let line = line.strip_suffix('\r').unwrap_or(line);
        let mut parts = line.split('\t');
        let (src, tgt) = match (parts.next(), parts.next(), parts.next()) {
            (Some(s), Some(t), None) => (s, t),
            _ => return Err(parse_err("expected exactly one TAB")),
        };
        let src: Vec<TokenId> = src.split_whitespace().map(|t| vocab.id(t)).collect();
        if src.is_empty() {
            return Err(parse_err("empty source side"));
        }
        let body: Vec<TokenId> = tgt.split_whitespace().map(|t| vocab.id(t)).collect();
        if body.is_empty() {
            return Err(parse_err("empty target side"));
        }
        let mut tgt = Vec::with_capacity(body.len() + 3);
        tgt.push(tag);
        tgt.push(BOS);
        tgt.extend(body);
        tgt.push(EOS);
        sentences.push(SentencePair { src, tgt });
    }
    ParallelCorpus::new(pair, sentences, vocab.len())
}

/// Reads a TSV corpus file. Unknown tokens map to UNK.
pub fn load_parallel(path: impl AsRef<Path>, pair: LangPairId, vocab: &Vocab) -> Result<ParallelCorpus> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_parallel(&text, &path.display().to_string(), pair, vocab)
}

/// Reads a corpus manifest: one `pair<TAB>path` line per corpus, `#`
/// comments allowed. Relative paths resolve against the manifest's
/// directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<(LangPairId, std::path::PathBuf)>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (pair, file) = line.split_once(char::is_whitespace).ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg: "expected `pair<TAB>path`".into(),
        })?;
        out.push((pair.parse()?, base.join(file.trim())));
    }
    if out.is_empty() {
        return Err(Error::Empty(format!("manifest {}", path.display())));
    }
    Ok(out)
}

/// Manifest text for `(pair, file name)` entries.
pub fn manifest_text<'a>(entries: impl IntoIterator<Item = (&'a LangPairId, &'a str)>) -> String {
    entries.into_iter().map(|(p, f)| format!("{p}\t{f}\n")).collect()
}

/// A mini-batch: the corpus indices it was drawn from plus copies of the
/// sentence pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub examples: Vec<SentencePair>,
}

impl Batch {
    pub fn new(examples: Vec<SentencePair>) -> Self {
        Self {
            indices: (0..examples.len()).collect(),
            examples,
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Seeded shuffle of sentence indices partitioned into `ceil(n / batch_size)`
/// batches. Indices inside a batch are kept in ascending order, so a single
/// batch covering the corpus is independent of the seed.
pub fn batch_iter(corpus: &ParallelCorpus, batch_size: usize, seed: u64) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Invalid("batch_size must be at least 1".into()));
    }
    if corpus.is_empty() {
        return Err(Error::Empty(format!("corpus {}", corpus.pair())));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    Ok(order
        .chunks(batch_size)
        .map(|chunk| {
            let mut indices = chunk.to_vec();
            indices.sort_unstable();
            let examples = indices.iter().map(|&i| corpus.sentences[i].clone()).collect();
            Batch { indices, examples }
        })
        .collect())
}

//! Synthetic language families generated by lexicon substitution along a
//! rooted tree.
//!
//! The root lexicon is the target-side ("en") vocabulary. Walking an edge
//! into a node rewrites each inherited lexicon entry to a fresh random token
//! with probability equal to that node's `rate`. Every leaf language gets the
//! same target sentences, with the source side obtained by mapping each
//! target word through the leaf's lexicon.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{validate_lang_code, LangPairId, RawParallelCorpus};

fn default_target() -> String {
    "en".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhyloNode {
    /// Mutation rate on the edge from the parent. Ignored on the root.
    #[serde(default)]
    pub rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leaf: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<PhyloNode>,
}

impl PhyloNode {
    pub fn leaf(code: impl Into<String>, rate: f64) -> Self {
        Self {
            rate,
            leaf: Some(code.into()),
            children: Vec::new(),
        }
    }

    pub fn internal(rate: f64, children: Vec<PhyloNode>) -> Self {
        Self {
            rate,
            leaf: None,
            children,
        }
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a str>) {
        match &self.leaf {
            Some(code) => out.push(code),
            None => self.children.iter().for_each(|c| c.collect_leaves(out)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhyloSpec {
    pub lexicon_size: usize,
    pub sentence_len_min: usize,
    pub sentence_len_max: usize,
    pub corpus_size: usize,
    pub seed: u64,
    #[serde(default = "default_target")]
    pub target: String,
    pub tree: PhyloNode,
}

impl PhyloSpec {
    /// `families` groups of `leaves_per_family` leaves hanging off the root.
    /// Leaf codes are two letters: family letter then member letter
    /// (`aa ab .. ba bb ..`).
    pub fn balanced(
        families: usize,
        leaves_per_family: usize,
        cross_rate: f64,
        within_rate: f64,
        corpus_size: usize,
        seed: u64,
    ) -> Self {
        let letter = |i: usize| char::from(b'a' + (i % 26) as u8);
        let tree = PhyloNode::internal(
            0.0,
            (0..families)
                .map(|f| {
                    PhyloNode::internal(
                        cross_rate,
                        (0..leaves_per_family)
                            .map(|l| PhyloNode::leaf(format!("{}{}", letter(f), letter(l)), within_rate))
                            .collect(),
                    )
                })
                .collect(),
        );
        Self {
            lexicon_size: 30,
            sentence_len_min: 3,
            sentence_len_max: 8,
            corpus_size,
            seed,
            target: default_target(),
            tree,
        }
    }

    pub fn leaves(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.tree.collect_leaves(&mut out);
        out
    }

    pub fn validate(&self) -> Result<()> {
        fn walk(node: &PhyloNode) -> Result<()> {
            if !(0.0..=1.0).contains(&node.rate) {
                return Err(Error::Invalid(format!("mutation rate {} outside [0, 1]", node.rate)));
            }
            match (&node.leaf, node.children.is_empty()) {
                (Some(code), true) => validate_lang_code(code),
                (None, false) => node.children.iter().try_for_each(walk),
                (Some(code), false) => Err(Error::Invalid(format!("leaf {code:?} has children"))),
                (None, true) => Err(Error::Invalid("internal node without children".into())),
            }
        }
        walk(&self.tree)?;
        validate_lang_code(&self.target)?;
        let leaves = self.leaves();
        if leaves.len() < 2 {
            return Err(Error::Invalid("a phylogeny needs at least two leaves".into()));
        }
        let mut seen = HashSet::new();
        for l in &leaves {
            if !seen.insert(*l) {
                return Err(Error::Invalid(format!("duplicate leaf {l:?}")));
            }
            if *l == self.target {
                return Err(Error::Invalid(format!("leaf {l:?} equals the target language")));
            }
        }
        if self.corpus_size < 1 {
            return Err(Error::Invalid("corpus_size must be at least 1".into()));
        }
        if self.lexicon_size < 1 {
            return Err(Error::Invalid("lexicon_size must be at least 1".into()));
        }
        if self.sentence_len_min < 1 || self.sentence_len_min > self.sentence_len_max {
            return Err(Error::Invalid(format!(
                "bad sentence length range {}..={}",
                self.sentence_len_min, self.sentence_len_max
            )));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Invalid(format!("phylogeny config: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("phylogeny spec serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::format(path.display(), e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpora {
    /// The target-side lexicon.
    pub root_lexicon: Vec<String>,
    /// Per leaf, the lexicon after all substitutions on its root path.
    /// Entry `i` translates `root_lexicon[i]`.
    pub leaf_lexicons: BTreeMap<String, Vec<String>>,
    pub corpora: BTreeMap<LangPairId, RawParallelCorpus>,
}

const ONSETS: &[u8] = b"bcdfghjklmnprstvz";
const NUCLEI: &[u8] = b"aeiou";

fn random_word(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.gen_range(2..=3);
    let mut w = String::with_capacity(syllables * 2);
    for _ in 0..syllables {
        w.push(char::from(ONSETS[rng.gen_range(0..ONSETS.len())]));
        w.push(char::from(NUCLEI[rng.gen_range(0..NUCLEI.len())]));
    }
    w
}

fn mutate(node: &PhyloNode, parent: &[String], rng: &mut ChaCha8Rng, out: &mut BTreeMap<String, Vec<String>>) {
    let lexicon: Vec<String> = parent
        .iter()
        .map(|w| {
            if rng.gen_bool(node.rate) {
                random_word(rng)
            } else {
                w.clone()
            }
        })
        .collect();
    match &node.leaf {
        Some(code) => {
            out.insert(code.clone(), lexicon);
        }
        None => {
            for child in &node.children {
                mutate(child, &lexicon, rng, out);
            }
        }
    }
}

/// Generates one `leaf -> target` corpus per leaf. Deterministic in
/// `spec.seed`.
pub fn synth_generate(spec: &PhyloSpec) -> Result<SynthCorpora> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut root_lexicon = Vec::with_capacity(spec.lexicon_size);
    let mut seen = HashSet::new();
    while root_lexicon.len() < spec.lexicon_size {
        let w = random_word(&mut rng);
        if seen.insert(w.clone()) {
            root_lexicon.push(w);
        }
    }

    let mut leaf_lexicons = BTreeMap::new();
    for child in &spec.tree.children {
        mutate(child, &root_lexicon, &mut rng, &mut leaf_lexicons);
    }

    let sentences: Vec<Vec<usize>> = (0..spec.corpus_size)
        .map(|_| {
            let len = rng.gen_range(spec.sentence_len_min..=spec.sentence_len_max);
            (0..len).map(|_| rng.gen_range(0..spec.lexicon_size)).collect()
        })
        .collect();

    let mut corpora = BTreeMap::new();
    for (code, lexicon) in &leaf_lexicons {
        let pair = LangPairId::new(code.clone(), spec.target.clone())?;
        let lines = sentences
            .iter()
            .map(|s| {
                let src = s.iter().map(|&i| lexicon[i].clone()).collect();
                let tgt = s.iter().map(|&i| root_lexicon[i].clone()).collect();
                (src, tgt)
            })
            .collect();
        corpora.insert(pair.clone(), RawParallelCorpus { pair, lines });
    }

    Ok(SynthCorpora {
        root_lexicon,
        leaf_lexicons,
        corpora,
    })
}

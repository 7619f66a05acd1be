//! Pairwise scores between Fisher vectors of a target pair `t` and an
//! auxiliary pair `a`:
//!
//! * MSE: `sum (F_t - F_a)^2 / |F_t|`, lower is closer.
//! * KL: `|sum F_a * ln(F_a / F_t)|` on raw values, lower is closer. Not a
//!   metric on unnormalized vectors; it can be 0 for distinct inputs.
//! * Overlap: `|M_t & M_a| / |M_t|` over top-K masks, higher is closer.

use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::LangPairId;
use crate::error::{Error, Result};
use crate::fim::{restrict_sections, top_k_mask, FimVector, FimView, FisherMask};
use crate::model::SectionId;

/// Entries are clamped to at least this before the KL ratio.
pub const KL_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mse,
    Kl,
    Overlap,
}

impl Method {
    pub fn higher_is_closer(self) -> bool {
        matches!(self, Method::Overlap)
    }

    /// Score of a vector against itself.
    pub fn identity(self) -> f64 {
        match self {
            Method::Mse | Method::Kl => 0.0,
            Method::Overlap => 1.0,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Mse => "mse",
            Method::Kl => "kl",
            Method::Overlap => "overlap",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(Method::Mse),
            "kl" => Ok(Method::Kl),
            "overlap" => Ok(Method::Overlap),
            _ => Err(Error::Invalid(format!("unknown similarity method {s:?}"))),
        }
    }
}

fn check_views(ft: &FimView, fa: &FimView) -> Result<()> {
    if ft.len() != fa.len() {
        return Err(Error::LengthMismatch {
            left: ft.len(),
            right: fa.len(),
        });
    }
    if ft.sections != fa.sections {
        return Err(Error::Invalid("views use different section filters".into()));
    }
    Ok(())
}

fn mse_values(ft: &[f64], fa: &[f64]) -> f64 {
    let sum: f64 = ft.iter().zip(fa).map(|(t, a)| (t - a) * (t - a)).sum();
    sum / ft.len() as f64
}

fn kl_values(ft: &[f64], fa: &[f64]) -> f64 {
    ft.iter()
        .zip(fa)
        .map(|(&t, &a)| {
            let (t, a) = (t.max(KL_EPS), a.max(KL_EPS));
            a * (a / t).ln()
        })
        .sum::<f64>()
        .abs()
}

pub fn mse_score(ft: &FimView, fa: &FimView) -> Result<f64> {
    check_views(ft, fa)?;
    if ft.is_empty() {
        return Err(Error::Empty("fisher view".into()));
    }
    Ok(mse_values(&ft.values, &fa.values))
}

pub fn kl_score(ft: &FimView, fa: &FimView) -> Result<f64> {
    check_views(ft, fa)?;
    Ok(kl_values(&ft.values, &fa.values))
}

pub fn overlap_score(mt: &FisherMask, ma: &FisherMask) -> Result<f64> {
    if mt.len() != ma.len() {
        return Err(Error::LengthMismatch {
            left: mt.len(),
            right: ma.len(),
        });
    }
    if mt.k_fraction != ma.k_fraction {
        return Err(Error::Invalid(format!(
            "masks built with different k ({} vs {})",
            mt.k_fraction, ma.k_fraction
        )));
    }
    if mt.sections != ma.sections {
        return Err(Error::Invalid("masks use different section filters".into()));
    }
    let active = mt.count_ones();
    if active == 0 {
        return Err(Error::Empty("target mask has no active bits".into()));
    }
    let both = mt.bits.iter().zip(&ma.bits).filter(|(a, b)| **a && **b).count();
    Ok(both as f64 / active as f64)
}

/// Row `i`, column `j` holds the score with `pairs[i]` as target and
/// `pairs[j]` as auxiliary.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub method: Method,
    pub pairs: Vec<LangPairId>,
    pub scores: Vec<Vec<f64>>,
    /// Set for Overlap only.
    pub k_fraction: Option<f64>,
    pub sections: Vec<SectionId>,
    pub model_hash: String,
}

impl SimilarityMatrix {
    pub fn index_of(&self, pair: &LangPairId) -> Option<usize> {
        self.pairs.iter().position(|p| p == pair)
    }

    pub fn score(&self, target: &LangPairId, aux: &LangPairId) -> Option<f64> {
        Some(self.scores[self.index_of(target)?][self.index_of(aux)?])
    }

    /// Row-major CSV with a `pair` header cell and pair codes on both axes.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("pair");
        for p in &self.pairs {
            let _ = write!(s, ",{p}");
        }
        s.push('\n');
        for (p, row) in self.pairs.iter().zip(&self.scores) {
            s.push_str(&p.to_string());
            for v in row {
                let _ = write!(s, ",{v:?}");
            }
            s.push('\n');
        }
        s
    }

    pub fn meta_text(&self) -> String {
        let k = self.k_fraction.map_or_else(|| "none".to_string(), |k| format!("{k:?}"));
        format!(
            "method = {}\nk = {}\nsections = {}\nmodel_hash = {}\n",
            self.method,
            k,
            SectionId::filter_label(&self.sections),
            self.model_hash
        )
    }

    /// Parses the CSV; metadata fields not carried by the CSV are taken
    /// from the arguments.
    pub fn from_csv(text: &str, method: Method, label: &str) -> Result<Self> {
        let bad = |msg: String| Error::format(label, msg);
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("empty matrix".into()))?;
        let mut cells = header.split(',');
        if cells.next().map(str::trim) != Some("pair") {
            return Err(bad("header must start with `pair`".into()));
        }
        let pairs = cells
            .map(|c| c.trim().parse::<LangPairId>())
            .collect::<Result<Vec<_>>>()?;
        let mut scores = Vec::with_capacity(pairs.len());
        for (i, line) in lines.enumerate() {
            let mut cells = line.split(',');
            let row_pair: LangPairId = cells.next().unwrap_or("").trim().parse()?;
            if pairs.get(i) != Some(&row_pair) {
                return Err(bad(format!("row {} is {row_pair}, expected column order", i + 1)));
            }
            let row = cells
                .map(|c| {
                    c.trim()
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| bad(format!("bad score {c:?} in row {row_pair}")))
                })
                .collect::<Result<Vec<_>>>()?;
            if row.len() != pairs.len() {
                return Err(bad(format!("row {row_pair} has {} scores", row.len())));
            }
            scores.push(row);
        }
        if scores.len() != pairs.len() {
            return Err(bad(format!("{} rows for {} columns", scores.len(), pairs.len())));
        }
        Ok(Self {
            method,
            pairs,
            scores,
            k_fraction: None,
            sections: SectionId::FFN.to_vec(),
            model_hash: String::new(),
        })
    }

    pub fn meta_path(csv: &Path) -> PathBuf {
        let mut s = csv.as_os_str().to_owned();
        s.push(".meta");
        PathBuf::from(s)
    }

    /// Writes `path` and its `.meta` sidecar.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))?;
        let meta = Self::meta_path(path);
        std::fs::write(&meta, self.meta_text()).map_err(|e| Error::io(meta, e))
    }

    /// Reads a matrix CSV. When a `.meta` sidecar exists its method must
    /// agree with `method`, and its k/sections/hash are restored.
    pub fn load(path: impl AsRef<Path>, method: Method) -> Result<Self> {
        let path = path.as_ref();
        let label = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m = Self::from_csv(&text, method, &label)?;
        let meta_path = Self::meta_path(path);
        if let Ok(meta) = std::fs::read_to_string(&meta_path) {
            for line in meta.lines() {
                let Some((k, v)) = line.split_once(" = ") else { continue };
                match k {
                    "method" => {
                        let stored: Method = v.parse()?;
                        if stored != method {
                            return Err(Error::Invalid(format!("{label} holds {stored} scores, not {method}")));
                        }
                    }
                    "k" if v != "none" => {
                        m.k_fraction = Some(v.parse().map_err(|_| Error::format(&label, "bad k in metadata"))?)
                    }
                    "sections" => m.sections = SectionId::parse_filter(v)?,
                    "model_hash" => m.model_hash = v.to_string(),
                    _ => {}
                }
            }
        }
        Ok(m)
    }
}

/// Scores every ordered pair of `fims` under one method. For Overlap the
/// mask of each FIM is built once and reused.
pub fn similarity_matrix(
    fims: &[FimVector],
    method: Method,
    k_fraction: f64,
    sections: &[SectionId],
) -> Result<SimilarityMatrix> {
    let first = fims.first().ok_or_else(|| Error::Empty("no FIMs".into()))?;
    for f in fims {
        if f.model_hash() != first.model_hash() {
            return Err(Error::HashMismatch {
                expected: first.model_hash().to_string(),
                found: format!("{} (from {})", f.model_hash(), f.pair()),
            });
        }
        if f.layout() != first.layout() {
            return Err(Error::Invalid(format!("{} has a different layout", f.pair())));
        }
    }
    let pairs: Vec<LangPairId> = fims.iter().map(|f| f.pair().clone()).collect();
    for (i, p) in pairs.iter().enumerate() {
        if pairs[..i].contains(p) {
            return Err(Error::Invalid(format!("language pair {p} appears twice")));
        }
    }
    let views = fims
        .iter()
        .map(|f| restrict_sections(f, sections))
        .collect::<Result<Vec<_>>>()?;
    let n = views.len();
    let scores = match method {
        Method::Overlap => {
            let masks = views
                .iter()
                .map(|v| top_k_mask(v, k_fraction))
                .collect::<Result<Vec<_>>>()?;
            (0..n)
                .map(|t| (0..n).map(|a| overlap_score(&masks[t], &masks[a])).collect())
                .collect::<Result<Vec<Vec<f64>>>>()?
        }
        Method::Mse => (0..n)
            .map(|t| (0..n).map(|a| mse_score(&views[t], &views[a])).collect())
            .collect::<Result<Vec<Vec<f64>>>>()?,
        Method::Kl => (0..n)
            .map(|t| (0..n).map(|a| kl_score(&views[t], &views[a])).collect())
            .collect::<Result<Vec<Vec<f64>>>>()?,
    };
    Ok(SimilarityMatrix {
        method,
        pairs,
        scores,
        k_fraction: (method == Method::Overlap).then_some(k_fraction),
        sections: views[0].sections.clone(),
        model_hash: first.model_hash().to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(vals: &[f64]) -> FimView {
        FimView {
            pair: "aa-en".parse().unwrap(),
            model_hash: String::new(),
            layout_digest: String::new(),
            sections: SectionId::FFN.to_vec(),
            values: vals.to_vec(),
        }
    }

    fn mask(n: usize, ones: &[usize]) -> FisherMask {
        let mut bits = vec![false; n];
        for &i in ones {
            bits[i] = true;
        }
        FisherMask {
            bits,
            k_fraction: 0.4,
            sections: SectionId::FFN.to_vec(),
        }
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_score(&v(&[1.0, 2.0]), &v(&[1.0, 2.0])).unwrap(), 0.0);
        assert_eq!(mse_score(&v(&[1.0, 2.0]), &v(&[3.0, 4.0])).unwrap(), 4.0);
        assert_eq!(mse_score(&v(&[2.0, 4.0]), &v(&[6.0, 8.0])).unwrap(), 16.0);
        assert!(mse_score(&v(&[1.0]), &v(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_score(&v(&[0.3, 0.7]), &v(&[0.3, 0.7])).unwrap(), 0.0);
        let s = kl_score(&v(&[0.2, 0.2]), &v(&[0.4, 0.1])).unwrap();
        let expect = (0.4 * 2f64.ln() + 0.1 * 0.5f64.ln()).abs();
        assert!((s - expect).abs() < 1e-15);
        assert!((s - 0.20794).abs() < 1e-5);
        // 0.2 ln 2 + 0.2 ln 0.5 cancels although the vectors differ
        let s = kl_score(&v(&[0.1, 0.4]), &v(&[0.2, 0.2])).unwrap();
        assert!(s.abs() < 1e-15, "{s}");
        assert!(kl_score(&v(&[1.0]), &v(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn kl_clamps_zeros() {
        let s = kl_score(&v(&[0.0, 1.0]), &v(&[0.0, 1.0])).unwrap();
        assert_eq!(s, 0.0);
        let s = kl_score(&v(&[0.0, 1.0]), &v(&[1.0, 1.0])).unwrap();
        assert!((s - (1.0 / KL_EPS).ln()).abs() < 1e-9);
    }

    #[test]
    fn overlap_examples() {
        let a = mask(8, &[1, 2, 3, 4]);
        assert_eq!(overlap_score(&a, &a).unwrap(), 1.0);
        assert_eq!(overlap_score(&a, &mask(8, &[0, 5, 6, 7])).unwrap(), 0.0);
        assert_eq!(overlap_score(&a, &mask(8, &[3, 4, 5, 6])).unwrap(), 0.5);
        assert!(overlap_score(&a, &mask(9, &[3])).is_err());
        let mut other_k = mask(8, &[1]);
        other_k.k_fraction = 0.5;
        assert!(overlap_score(&a, &other_k).is_err());
    }

    #[test]
    fn method_parsing() {
        assert_eq!("Overlap".parse::<Method>().unwrap(), Method::Overlap);
        assert_eq!("kl".parse::<Method>().unwrap(), Method::Kl);
        assert!("cos".parse::<Method>().is_err());
        assert_eq!(Method::Mse.to_string(), "mse");
    }

    #[test]
    fn csv_round_trip() {
        let m = SimilarityMatrix {
            method: Method::Kl,
            pairs: vec!["aa-en".parse().unwrap(), "bb-en".parse().unwrap()],
            scores: vec![vec![0.0, 1.0 / 3.0], vec![2.5e-17, 0.0]],
            k_fraction: None,
            sections: SectionId::FFN.to_vec(),
            model_hash: "h".into(),
        };
        let csv = m.to_csv();
        assert!(csv.starts_with("pair,aa-en,bb-en\naa-en,0.0,"));
        let back = SimilarityMatrix::from_csv(&csv, Method::Kl, "mem").unwrap();
        assert_eq!(back.scores, m.scores);
        assert_eq!(back.pairs, m.pairs);
        assert!(SimilarityMatrix::from_csv("pair,aa-en\nbb-en,0.0\n", Method::Kl, "mem").is_err());
        assert!(SimilarityMatrix::from_csv("pair,aa-en\naa-en,x\n", Method::Kl, "mem").is_err());
    }

    #[test]
    fn sidecar_method_must_agree() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = SimilarityMatrix {
            method: Method::Overlap,
            pairs: vec!["aa-en".parse().unwrap(), "bb-en".parse().unwrap()],
            scores: vec![vec![1.0, 0.25], vec![0.25, 1.0]],
            k_fraction: Some(0.4),
            sections: SectionId::FFN.to_vec(),
            model_hash: "abc".into(),
        };
        m.save(&path).unwrap();
        assert_eq!(SimilarityMatrix::load(&path, Method::Overlap).unwrap(), m);
        assert!(SimilarityMatrix::load(&path, Method::Mse).is_err());
    }
}

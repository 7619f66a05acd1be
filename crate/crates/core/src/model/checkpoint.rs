//! Plain-text checkpoint: a `key = value` header, the layout, then one value
//! per line in shortest round-trip decimal form. The header carries the
//! content hash, which is re-derived and checked on load.

use std::path::Path;

use crate::error::{Error, Result};

use super::{Layout, ModelConfig, ParamStore};

const MAGIC: &str = "pseudofam-checkpoint 1";

pub(crate) fn to_text(params: &ParamStore) -> String {
    let mut s = String::with_capacity(params.len() * 24);
    s.push_str(MAGIC);
    s.push('\n');
    s.push_str(&params.header_text());
    s.push_str(&format!("hash = {}\n", params.content_hash()));
    s.push_str(&format!("layout {}\n", params.layout().segments().len()));
    s.push_str(&params.layout().to_text());
    s.push_str(&format!("values {}\n", params.len()));
    for v in params.values() {
        s.push_str(&format!("{v:?}\n"));
    }
    s
}

pub(crate) fn from_text(text: &str, label: &str) -> Result<ParamStore> {
    let bad = |msg: String| Error::format(label, msg);
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(bad("not a pseudofam checkpoint".into()));
    }
    let mut kv = |key: &str| -> Result<String> {
        let line = lines.next().ok_or_else(|| bad(format!("missing {key}")))?;
        match line.split_once(" = ") {
            Some((k, v)) if k == key => Ok(v.to_string()),
            _ => Err(bad(format!("expected `{key} = ...`, found {line:?}"))),
        }
    };
    let num = |v: String, key: &str| -> Result<u64> { v.parse().map_err(|_| bad(format!("{key} is not an integer"))) };
    let config = ModelConfig {
        vocab_size: num(kv("vocab_size")?, "vocab_size")? as usize,
        embed_dim: num(kv("embed_dim")?, "embed_dim")? as usize,
        hidden_dim: num(kv("hidden_dim")?, "hidden_dim")? as usize,
        num_heads: num(kv("num_heads")?, "num_heads")? as usize,
        max_len: num(kv("max_len")?, "max_len")? as usize,
        seed: num(kv("seed")?, "seed")?,
    };
    let hash = kv("hash")?;

    let count = |line: Option<&str>, key: &str| -> Result<usize> {
        line.and_then(|l| l.strip_prefix(key))
            .and_then(|n| n.trim().parse().ok())
            .ok_or_else(|| bad(format!("expected `{key} <count>`")))
    };
    let nseg = count(lines.next(), "layout")?;
    let mut segments = Vec::with_capacity(nseg);
    for _ in 0..nseg {
        let line = lines.next().ok_or_else(|| bad("truncated layout".into()))?;
        let seg = super::parse_segment_line(line).map_err(|e| bad(e.to_string()))?;
        segments.push(seg);
    }
    let layout = Layout::from_segments(segments)?;
    let n = count(lines.next(), "values")?;
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        let line = lines.next().ok_or_else(|| bad("truncated values".into()))?;
        values.push(line.parse::<f64>().map_err(|_| bad(format!("bad value {line:?}")))?);
    }
    if lines.next().is_some() {
        return Err(bad("trailing data after values".into()));
    }
    let params = ParamStore::from_parts(config, layout, values).map_err(|e| bad(e.to_string()))?;
    let actual = params.content_hash();
    if actual != hash {
        return Err(Error::HashMismatch {
            expected: hash,
            found: actual,
        });
    }
    Ok(params)
}

pub fn save_checkpoint(params: &ParamStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_text(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ParamStore> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_text(&text, &path.display().to_string())
}

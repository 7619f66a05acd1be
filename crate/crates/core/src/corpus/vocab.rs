use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

use super::{validate_lang_code, TokenId};

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;

const SPECIALS: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

fn tag_token(lang: &str) -> String {
    format!("__{lang}__")
}

/// Token/id mapping. Ids `0..reserved()` are PAD, BOS, EOS, UNK followed by
/// one tag per target language in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    target_langs: Vec<String>,
}

impl Vocab {
    /// Builds a vocabulary from ordinary tokens, in id order.
    pub fn from_tokens<I, S>(tokens: I, target_langs: &[&str]) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut langs: Vec<String> = target_langs.iter().map(|s| s.to_string()).collect();
        langs.sort();
        langs.dedup();
        for l in &langs {
            validate_lang_code(l)?;
        }
        let mut all: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        all.extend(langs.iter().map(|l| tag_token(l)));
        let reserved = all.len();
        all.extend(tokens.into_iter().map(Into::into));

        let mut index = HashMap::with_capacity(all.len());
        for (i, tok) in all.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::Invalid(format!("bad vocabulary token {tok:?}")));
            }
            if index.insert(tok.clone(), i as TokenId).is_some() {
                let what = if i < reserved { "reserved" } else { "duplicate" };
                return Err(Error::Invalid(format!("{what} token {tok:?} in vocabulary")));
            }
        }
        Ok(Self {
            tokens: all,
            index,
            target_langs: langs,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn reserved(&self) -> usize {
        SPECIALS.len() + self.target_langs.len()
    }

    pub fn target_langs(&self) -> &[String] {
        &self.target_langs
    }

    /// Id of `token`, or UNK.
    pub fn id(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> &str {
        self.tokens.get(id as usize).map_or("<unk>", String::as_str)
    }

    pub fn tag_id(&self, lang: &str) -> Option<TokenId> {
        self.target_langs
            .binary_search_by(|l| l.as_str().cmp(lang))
            .ok()
            .map(|i| (SPECIALS.len() + i) as TokenId)
    }

    /// One token per line, in id order.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str, label: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < SPECIALS.len() || lines[..SPECIALS.len()] != SPECIALS {
            return Err(Error::format(label, "vocabulary must start with <pad> <s> </s> <unk>"));
        }
        let mut langs = Vec::new();
        let mut rest = &lines[SPECIALS.len()..];
        while let Some(lang) = rest
            .first()
            .and_then(|t| t.strip_prefix("__"))
            .and_then(|t| t.strip_suffix("__"))
        {
            langs.push(lang);
            rest = &rest[1..];
        }
        let sorted = langs.windows(2).all(|w| w[0] < w[1]);
        if !sorted {
            return Err(Error::format(label, "language tags are not sorted"));
        }
        Self::from_tokens(rest.iter().copied(), &langs).map_err(|e| Error::format(label, e.to_string()))
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
}

/// Keeps the `max_size - reserved` most frequent whitespace tokens across
/// `lines`; ties are broken lexicographically.
pub fn build_vocab_from_lines<'a, I>(lines: I, max_size: usize, target_langs: &[&str]) -> Result<Vocab>
where
    I: IntoIterator<Item = &'a str>,
{
    let reserved = Vocab::from_tokens(Vec::<String>::new(), target_langs)?;
    let nres = reserved.len();
    if max_size <= nres {
        return Err(Error::Invalid(format!(
            "max_size {max_size} must exceed the {nres} reserved ids"
        )));
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for line in lines {
        for tok in line.split_whitespace() {
            if reserved.get(tok).is_none() {
                *counts.entry(tok).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    ranked.truncate(max_size - nres);
    Vocab::from_tokens(ranked.into_iter().map(|(t, _)| t), target_langs)
}

/// Builds a vocabulary over every token of the given text/TSV files.
pub fn build_vocab<P: AsRef<Path>>(files: &[P], max_size: usize, target_langs: &[&str]) -> Result<Vocab> {
    if files.is_empty() {
        return Err(Error::Empty("no input files for vocabulary".into()));
    }
    let mut texts = Vec::with_capacity(files.len());
    for f in files {
        let f = f.as_ref();
        texts.push(std::fs::read_to_string(f).map_err(|e| Error::io(f, e))?);
    }
    build_vocab_from_lines(texts.iter().flat_map(|t| t.lines()), max_size, target_langs)
}

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";

/// Token ↔ id mapping. Ids 0..4 are the reserved tokens in the order
/// pad, unk, bos, eos.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    pub const PAD_ID: usize = 0;
    pub const UNK_ID: usize = 1;
    pub const BOS_ID: usize = 2;
    pub const EOS_ID: usize = 3;

    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate vocabulary token `{t}`"
                )));
            }
        }
        Ok(Self { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    /// Id of `token`, or the unk id when it is out of vocabulary.
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(Self::UNK_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.len() < 4 || tokens[..4] != [PAD, UNK, BOS, EOS] {
            return Err(Error::Checkpoint(format!(
                "{} is not a vocabulary file",
                path.display()
            )));
        }
        Self::from_tokens(tokens)
    }
}

/// Builds a vocabulary from a token stream. Tokens seen at least
/// `min_count` times follow the reserved ones, most frequent first and
/// lexicographic among equal counts.
pub fn build_vocab<'a, I>(tokens: I, min_count: usize) -> Vocab
where
    I: IntoIterator<Item = &'a str>,
{
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in tokens {
        *counts.entry(t).or_default() += 1;
    }
    let reserved = [PAD, UNK, BOS, EOS];
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_count.max(1) && !reserved.contains(t))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let tokens = reserved
        .iter()
        .map(|s| s.to_string())
        .chain(kept.into_iter().map(|(t, _)| t.to_string()))
        .collect();
    Vocab::from_tokens(tokens).expect("tokens are distinct")
}

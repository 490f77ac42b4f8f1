use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const OOV_ID: usize = 1;
pub const PAD_TOKEN: &str = "[PAD]";
pub const OOV_TOKEN: &str = "[OOV]";

/// Word-level vocabulary. Ids are contiguous; 0 and 1 are reserved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

/// Padded token ids and the matching real-token mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tokens {
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
}

impl Tokens {
    /// Number of real (unmasked) tokens.
    pub fn real_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// The prefix of real tokens. Tokenizer output is always a real prefix
    /// followed by padding, so this drops only padding.
    pub fn trimmed(&self) -> (&[usize], &[bool]) {
        let n = self.mask.iter().take_while(|&&m| m).count().max(1);
        (&self.ids[..n], &self.mask[..n])
    }
}

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_lowercase)
}

impl Vocab {
    /// Most frequent tokens first, ties broken lexicographically, until the
    /// vocabulary (including the two reserved ids) holds `size` entries.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, size: usize) -> Result<Self> {
        if size < 3 {
            return Err(Error::input(format!("vocabulary size must be at least 3, got {size}")));
        }
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for t in texts {
            for w in words(t) {
                *counts.entry(w).or_default() += 1;
            }
        }
        if counts.is_empty() {
            return Err(Error::input("cannot build a vocabulary from an empty corpus"));
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        // BTreeMap order is lexicographic; a stable sort on count keeps it for ties.
        ranked.sort_by_key(|e| std::cmp::Reverse(e.1));
        let tokens = [PAD_TOKEN.to_string(), OOV_TOKEN.to_string()]
            .into_iter()
            .chain(ranked.into_iter().map(|(w, _)| w).take(size - 2))
            .collect();
        Self::from_tokens(tokens)
    }

    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD_ID] != PAD_TOKEN || tokens[OOV_ID] != OOV_TOKEN {
            return Err(Error::input("vocabulary must start with the PAD and OOV tokens"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate().skip(2) {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::input(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(OOV_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Lowercased whitespace tokenization, truncated or padded to `max_len`.
    /// Empty text becomes a single OOV token.
    pub fn tokenize(&self, text: &str, max_len: usize) -> Tokens {
        let max_len = max_len.max(1);
        let mut ids: Vec<usize> = words(text).take(max_len).map(|w| self.id(&w)).collect();
        if ids.is_empty() {
            ids.push(OOV_ID);
        }
        let real = ids.len();
        ids.resize(max_len, PAD_ID);
        let mask = (0..max_len).map(|i| i < real).collect();
        Tokens { ids, mask }
    }
}

pub fn build_vocab<'a>(texts: impl IntoIterator<Item = &'a str>, size: usize) -> Result<Vocab> {
    Vocab::build(texts, size)
}

pub fn tokenize(text: &str, vocab: &Vocab, max_len: usize) -> Tokens {
    vocab.tokenize(text, max_len)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_then_lexicographic() {
        let v = build_vocab(["x x y"], 4).unwrap();
        assert_eq!(v.tokens(), &["[PAD]", "[OOV]", "x", "y"]);
        let v = build_vocab(["b a"], 4).unwrap();
        assert_eq!(v.id("a"), 2);
        assert_eq!(v.id("b"), 3);
    }

    #[test]
    fn small_size_drops_rare_tokens() {
        let v = build_vocab(["c c c a a b", "d"], 4).unwrap();
        assert_eq!(v.tokens(), &["[PAD]", "[OOV]", "c", "a"]);
        assert_eq!(v.id("b"), OOV_ID);
        assert_eq!(v.id("d"), OOV_ID);
    }

    #[test]
    fn build_errors() {
        assert!(build_vocab(["a"], 2).is_err());
        assert!(build_vocab(["   "], 10).is_err());
        assert!(build_vocab(std::iter::empty(), 10).is_err());
    }

    #[test]
    fn tokenize_pads_and_masks() {
        let v = Vocab::from_tokens(vec!["[PAD]".into(), "[OOV]".into(), "a".into(), "b".into()]).unwrap();
        let t = v.tokenize("a b", 4);
        assert_eq!(t.ids, vec![2, 3, 0, 0]);
        assert_eq!(t.mask, vec![true, true, false, false]);
        assert_eq!(v.tokenize("A zzz", 2).ids, vec![2, 1]);
        let long = v.tokenize("a b a b a", 3);
        assert_eq!(long.ids, vec![2, 3, 2]);
        assert_eq!(long.mask, vec![true; 3]);
        let empty = v.tokenize("", 3);
        assert_eq!(empty.ids, vec![1, 0, 0]);
        assert_eq!(empty.mask, vec![true, false, false]);
        assert_eq!(empty.trimmed().0, &[1]);
    }
}

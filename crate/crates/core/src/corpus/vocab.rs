use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::Example;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;

const RESERVED: [&str; 3] = ["<pad>", "<unk>", "<cls>"];

/// Word-level vocabulary with reserved `<pad>`, `<unk>`, `<cls>` ids 0, 1, 2.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    lowercase: bool,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    lowercase: bool,
    tokens: Vec<String>,
}

impl From<VocabRepr> for Vocab {
    fn from(r: VocabRepr) -> Self {
        let index = r.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab {
            tokens: r.tokens,
            index,
            lowercase: r.lowercase,
        }
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr {
            lowercase: v.lowercase,
            tokens: v.tokens,
        }
    }
}

impl Vocab {
    /// Tokens ordered by descending frequency, ties broken lexicographically.
    pub fn build(examples: &[Example], lowercase: bool) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for ex in examples {
            for tok in &ex.tokens {
                *counts.entry(normalize(tok, lowercase)).or_default() += 1;
            }
        }
        let mut words: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, _)| !RESERVED.contains(&w.as_str()))
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().map(|(w, _)| w))
            .collect();
        VocabRepr { lowercase, tokens }.into()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    pub fn id(&self, token: &str) -> usize {
        let key = normalize(token, self.lowercase);
        self.index.get(&key).copied().unwrap_or(UNK)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }
}

fn normalize(token: &str, lowercase: bool) -> String {
    if lowercase {
        token.to_lowercase()
    } else {
        token.to_string()
    }
}

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::map::{CATEGORIES, COLORS};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;

const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

/// Instruction templates; `{target}` expands to "{color} {category}".
pub const TEMPLATES: [&str; 4] = [
    "go to the {target}",
    "find the {target}",
    "turn left then go to the {target}",
    "turn right then go to the {target}",
];

/// Closed word-level vocabulary: the four specials first, then every template,
/// color and category word in sorted order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tokenizer {
    words: Vec<String>,
}

impl Default for Tokenizer {
    fn default() -> Self {
        let mut set = BTreeSet::new();
        for t in TEMPLATES {
            for w in t.split_whitespace().filter(|w| !w.starts_with('{')) {
                set.insert(w.to_string());
            }
        }
        set.extend(COLORS.iter().map(|(c, _)| c.to_string()));
        set.extend(CATEGORIES.iter().map(|c| c.to_string()));
        let mut words: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        words.extend(set);
        Self { words }
    }
}

impl Tokenizer {
    pub fn vocab_size(&self) -> usize {
        self.words.len()
    }

    pub fn vocab(&self) -> &[String] {
        &self.words
    }

    pub fn id(&self, word: &str) -> u32 {
        self.words[SPECIALS.len()..]
            .binary_search_by(|w| w.as_str().cmp(word))
            .map_or(UNK, |i| (i + SPECIALS.len()) as u32)
    }

    /// `[bos, words…, eos]`; unknown words map to `unk`.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = vec![BOS];
        out.extend(text.split_whitespace().map(|w| self.id(&w.to_lowercase())));
        out.push(EOS);
        out
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|&&i| i > EOS)
            .filter_map(|&i| self.words.get(i as usize).map(String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

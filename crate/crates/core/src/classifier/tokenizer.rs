//! Lowercased word splitting plus a greedy longest-match subword vocabulary.
//!
//! Words are maximal alphanumeric runs or single punctuation characters. Each word maps to
//! one or more pieces; continuation pieces carry a `##` prefix. The word index of every
//! piece is kept so saliency can be computed per word.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use super::ClassifierError;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";

const SPECIALS: [&str; 5] = [PAD, UNK, CLS, SEP, MASK];
const MAX_PIECE_CHARS: usize = 100;

/// Splits text into lowercased words.
pub fn split_words(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
            continue;
        }
        if !current.is_empty() {
            words.push(std::mem::take(&mut current));
        }
        if !c.is_whitespace() && !c.is_control() {
            words.push(c.to_lowercase().collect());
        }
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}

/// Pieces of a tokenized text together with their word alignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenized {
    pub words: Vec<String>,
    pub ids: Vec<u32>,
    /// For every piece, the index of the word it came from.
    pub word_of: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    pieces: Vec<String>,
    index: HashMap<String, u32>,
}

impl Tokenizer {
    /// Builds a vocabulary of at most `vocab_size` entries from training texts.
    ///
    /// The vocabulary holds the special tokens, every character seen (as a word-initial and
    /// a `##` piece, most frequent first), then whole words by descending frequency.
    pub fn train<'a>(
        texts: impl IntoIterator<Item = &'a str>,
        vocab_size: usize,
    ) -> Result<Tokenizer, ClassifierError> {
        if vocab_size <= SPECIALS.len() {
            return Err(ClassifierError::Config(format!(
                "vocab_size {vocab_size} leaves no room beyond the special tokens"
            )));
        }
        let mut word_counts: BTreeMap<String, u64> = BTreeMap::new();
        for text in texts {
            for w in split_words(text) {
                *word_counts.entry(w).or_insert(0) += 1;
            }
        }
        let mut char_counts: BTreeMap<char, u64> = BTreeMap::new();
        for (w, n) in &word_counts {
            for c in w.chars() {
                *char_counts.entry(c).or_insert(0) += n;
            }
        }
        let mut chars: Vec<(char, u64)> = char_counts.into_iter().collect();
        chars.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut words: Vec<(String, u64)> = word_counts
            .into_iter()
            .filter(|(w, _)| w.chars().count() > 1)
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let mut pieces: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let candidates = chars
            .iter()
            .map(|(c, _)| c.to_string())
            .chain(chars.iter().map(|(c, _)| format!("##{c}")))
            .chain(words.into_iter().map(|(w, _)| w));
        for piece in candidates {
            if pieces.len() >= vocab_size {
                break;
            }
            pieces.push(piece);
        }
        Tokenizer::from_pieces(pieces)
    }

    pub fn from_pieces(pieces: Vec<String>) -> Result<Tokenizer, ClassifierError> {
        for (i, special) in SPECIALS.iter().enumerate() {
            if pieces.get(i).map(String::as_str) != Some(*special) {
                return Err(ClassifierError::Config(format!(
                    "vocabulary entry {i} must be {special}"
                )));
            }
        }
        let mut index = HashMap::with_capacity(pieces.len());
        for (i, p) in pieces.iter().enumerate() {
            if index.insert(p.clone(), i as u32).is_some() {
                return Err(ClassifierError::Config(format!(
                    "duplicate vocabulary entry {p:?}"
                )));
            }
        }
        Ok(Tokenizer { pieces, index })
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn id(&self, piece: &str) -> Option<u32> {
        self.index.get(piece).copied()
    }

    pub fn piece(&self, id: u32) -> Option<&str> {
        self.pieces.get(id as usize).map(String::as_str)
    }

    pub fn pad_id(&self) -> u32 {
        0
    }

    pub fn unk_id(&self) -> u32 {
        1
    }

    pub fn cls_id(&self) -> u32 {
        2
    }

    pub fn sep_id(&self) -> u32 {
        3
    }

    pub fn mask_id(&self) -> u32 {
        4
    }

    /// Greedy longest-match pieces of one lowercased word.
    fn word_pieces(&self, word: &str, out: &mut Vec<u32>) {
        let chars: Vec<char> = word.chars().collect();
        if chars.len() > MAX_PIECE_CHARS {
            out.push(self.unk_id());
            return;
        }
        let mark = out.len();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while end > start {
                let body: String = chars[start..end].iter().collect();
                let candidate = if start == 0 {
                    body
                } else {
                    format!("##{body}")
                };
                if let Some(id) = self.id(&candidate) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => {
                    out.push(id);
                    start = end;
                }
                None => {
                    out.truncate(mark);
                    out.push(self.unk_id());
                    return;
                }
            }
        }
    }

    pub fn tokenize(&self, text: &str) -> Tokenized {
        let words = split_words(text);
        let mut ids = Vec::new();
        let mut word_of = Vec::new();
        for (wi, w) in words.iter().enumerate() {
            let before = ids.len();
            self.word_pieces(w, &mut ids);
            word_of.extend(std::iter::repeat_n(wi, ids.len() - before));
        }
        Tokenized {
            words,
            ids,
            word_of,
        }
    }

    /// One piece per line, in id order.
    pub fn save(&self, path: &Path) -> Result<(), ClassifierError> {
        let mut text = self.pieces.join("\n");
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Tokenizer, ClassifierError> {
        let text = std::fs::read_to_string(path)?;
        Tokenizer::from_pieces(text.lines().map(str::to_string).collect())
    }
}

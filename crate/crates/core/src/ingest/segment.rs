//! Offset-preserving rule-based sentence segmentation.
//!
//! A sentence ends at a run of `.`, `!` or `?` (plus any closing quotes or brackets) when the
//! next non-space character does not start in lowercase. Periods inside URLs, e-mail addresses,
//! decimal numbers and listed abbreviations never end a sentence.

use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::corpus::Sentence;

const DEFAULT_ABBREVIATIONS: &str = include_str!("../../data/abbreviations.txt");

const CLOSERS: &[char] = &['"', '\'', ')', ']', '}', '”', '’', '»'];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmenterConfig {
    /// Non-terminal tokens such as `e.g.`; compared case-insensitively.
    pub abbreviations: Vec<String>,
    pub protect_urls: bool,
    pub min_sentence_chars: usize,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        SegmenterConfig {
            abbreviations: parse_abbreviation_list(DEFAULT_ABBREVIATIONS),
            protect_urls: true,
            min_sentence_chars: 2,
        }
    }
}

/// Reads a list with one abbreviation per line; `#` starts a comment line.
pub fn parse_abbreviation_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

impl SegmenterConfig {
    pub fn new(
        abbreviations: Vec<String>,
        protect_urls: bool,
        min_sentence_chars: usize,
    ) -> Result<Self, IngestError> {
        let cfg = SegmenterConfig {
            abbreviations: abbreviations
                .into_iter()
                .map(|a| a.to_lowercase())
                .collect(),
            protect_urls,
            min_sentence_chars,
        };
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<(), IngestError> {
        if self.min_sentence_chars < 1 {
            return Err(IngestError::Config(
                "min_sentence_chars must be at least 1".into(),
            ));
        }
        if let Some(bad) = self.abbreviations.iter().find(|a| !a.ends_with('.')) {
            return Err(IngestError::Config(format!(
                "abbreviation {bad:?} does not end with '.'"
            )));
        }
        Ok(())
    }

    /// Loads a JSON config; omitted keys keep their defaults.
    pub fn from_json_file(path: &Path) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: SegmenterConfig = serde_json::from_str(&text)
            .map_err(|e| IngestError::Config(format!("{}: {e}", path.display())))?;
        cfg.abbreviations = cfg.abbreviations.iter().map(|a| a.to_lowercase()).collect();
        cfg.check()?;
        Ok(cfg)
    }
}

fn url_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)(?:https?://|ftp://|www\.)[^\s<>]+|[\w.+-]+@[\w-]+(?:\.[\w-]+)+|\b(?:[a-z0-9-]+\.)+(?:com|org|net|io|edu|gov|ai)(?:/[^\s<>]*)?",
        )
        .expect("valid URL pattern")
    })
}

/// Marks characters that belong to URLs or e-mail addresses.
fn protected_mask(text: &str, char_count: usize) -> Vec<bool> {
    let mut mask = vec![false; char_count];
    // byte offset -> char offset
    let mut char_at = vec![0usize; text.len() + 1];
    let mut ci = 0;
    for (b, _) in text.char_indices() {
        char_at[b] = ci;
        ci += 1;
    }
    char_at[text.len()] = ci;
    for m in url_pattern().find_iter(text) {
        let trimmed = m
            .as_str()
            .trim_end_matches(|c: char| ".,;:!?".contains(c) || CLOSERS.contains(&c));
        let start = char_at[m.start()];
        let end = char_at[m.start() + trimmed.len()];
        for flag in &mut mask[start..end] {
            *flag = true;
        }
    }
    mask
}

fn ends_with_abbreviation(chars: &[char], dot: usize, abbreviations: &[String]) -> bool {
    abbreviations.iter().any(|abbr| {
        let abbr: Vec<char> = abbr.chars().collect();
        let n = abbr.len();
        if n > dot + 1 {
            return false;
        }
        let begin = dot + 1 - n;
        let matches = chars[begin..=dot]
            .iter()
            .zip(&abbr)
            .all(|(c, a)| c.to_lowercase().eq(a.to_lowercase()));
        let left_ok = begin == 0 || {
            let prev = chars[begin - 1];
            prev.is_whitespace() || "([{\"'“‘-/".contains(prev)
        };
        matches && left_ok
    })
}

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

/// Splits `text` into sentences with code-point offsets.
///
/// Sentences carry no leading or trailing whitespace; everything between two sentences is
/// whitespace, so the input can be rebuilt exactly from the sentences and the gaps.
pub fn segment_sentences(text: &str, cfg: &SegmenterConfig) -> Vec<Sentence> {
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();
    let mask = if cfg.protect_urls {
        protected_mask(text, n)
    } else {
        vec![false; n]
    };

    let mut bounds: Vec<(usize, usize)> = Vec::new();
    let mut start = skip_ws(&chars, 0);
    let mut i = start;
    while i < n {
        let c = chars[i];
        if !is_terminator(c) || mask[i] {
            i += 1;
            continue;
        }
        let mut end = i + 1;
        while end < n && (is_terminator(chars[end]) || CLOSERS.contains(&chars[end])) {
            end += 1;
        }
        let run_terminators = chars[i..end].iter().filter(|&&x| is_terminator(x)).count();
        if c == '.' && run_terminators == 1 {
            let decimal = i > 0
                && chars[i - 1].is_ascii_digit()
                && i + 1 < n
                && chars[i + 1].is_ascii_digit();
            if decimal || ends_with_abbreviation(&chars, i, &cfg.abbreviations) {
                i += 1;
                continue;
            }
        }
        let boundary = if end == n {
            true
        } else if chars[end].is_whitespace() {
            let next = skip_ws(&chars, end);
            next == n || !chars[next].is_lowercase()
        } else {
            false
        };
        if boundary {
            bounds.push((start, end));
            start = skip_ws(&chars, end);
            i = start;
        } else {
            i = end;
        }
    }
    if start < n {
        let mut end = n;
        while end > start && chars[end - 1].is_whitespace() {
            end -= 1;
        }
        if end > start {
            bounds.push((start, end));
        }
    }

    let bounds = merge_short(bounds, &chars, cfg.min_sentence_chars);
    bounds
        .into_iter()
        .enumerate()
        .map(|(index, (s, e))| Sentence {
            text: chars[s..e].iter().collect(),
            start: s,
            end: e,
            index,
        })
        .collect()
}

fn skip_ws(chars: &[char], mut i: usize) -> usize {
    while i < chars.len() && chars[i].is_whitespace() {
        i += 1;
    }
    i
}

/// Folds fragments shorter than `min_chars` into the following sentence (or the previous one
/// when the fragment is last).
fn merge_short(
    bounds: Vec<(usize, usize)>,
    chars: &[char],
    min_chars: usize,
) -> Vec<(usize, usize)> {
    let len_of = |(s, e): (usize, usize)| chars[s..e].iter().filter(|c| !c.is_whitespace()).count();
    let mut out: Vec<(usize, usize)> = Vec::with_capacity(bounds.len());
    let mut pending: Option<usize> = None;
    for (s, e) in bounds {
        let s = pending.take().unwrap_or(s);
        if len_of((s, e)) < min_chars {
            pending = Some(s);
        } else {
            out.push((s, e));
        }
    }
    if let Some(s) = pending {
        match out.last_mut() {
            Some(last) => last.1 = chars.len() - trailing_ws(chars),
            None => out.push((s, chars.len() - trailing_ws(chars))),
        }
    }
    out
}

fn trailing_ws(chars: &[char]) -> usize {
    chars.iter().rev().take_while(|c| c.is_whitespace()).count()
}

/// Renders an abstract one sentence per line, each line ending in a newline.
pub fn emit_sentence_lines(text: &str, cfg: &SegmenterConfig) -> String {
    let mut out = String::new();
    for sentence in segment_sentences(text, cfg) {
        let flat: Vec<&str> = sentence.text.split_whitespace().collect();
        out.push_str(&flat.join(" "));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn texts(text: &str) -> Vec<String> {
        segment_sentences(text, &SegmenterConfig::default())
            .into_iter()
            .map(|s| s.text)
            .collect()
    }

    #[test]
    fn url_dots_do_not_split() {
        let s = texts(
            "We release source code for our models and experiments at https://github.com/xxx.",
        );
        assert_eq!(s.len(), 1);
        assert!(s[0].ends_with("xxx."));
    }

    #[test]
    fn first_sentence_of_reference_record_ends_at_31() {
        let text = "Words can have multiple senses. Compositional distributional models of meaning have been argued to deal well with finer shades of meaning variation known as polysemy, but are not so well equipped to handle word senses that are etymologically unrelated, or homonymy.";
        let s = segment_sentences(text, &SegmenterConfig::default());
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].start, s[0].end), (0, 31));
        assert_eq!((s[1].start, s[1].end), (32, 265));
    }

    #[test]
    fn decimals_and_abbreviations_do_not_split() {
        let s = texts("It rose by 3.5 % (e.g., in Fig. 2). It fell.");
        assert_eq!(s, vec!["It rose by 3.5 % (e.g., in Fig. 2).", "It fell."]);
    }

    #[test]
    fn lowercase_continuation_does_not_split() {
        assert_eq!(texts("We use approx. the same budget. Done!").len(), 2);
        assert_eq!(texts("Results of Smith et al. show gains.").len(), 1);
    }

    #[test]
    fn question_and_exclamation_runs() {
        assert_eq!(
            texts("Does it work?! Yes. \"Really.\" Indeed"),
            vec!["Does it work?!", "Yes.", "\"Really.\"", "Indeed"]
        );
    }

    #[test]
    fn no_terminator_yields_one_sentence() {
        let s = segment_sentences(
            "  a run-on fragment without an end  ",
            &SegmenterConfig::default(),
        );
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].start, s[0].end), (2, 34));
    }

    #[test]
    fn short_fragments_merge() {
        let cfg = SegmenterConfig {
            min_sentence_chars: 3,
            ..SegmenterConfig::default()
        };
        let s = segment_sentences("A. Then more text.", &cfg);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].text, "A. Then more text.");
    }

    #[test]
    fn config_rejects_bad_entries() {
        assert!(SegmenterConfig::new(vec!["eg".into()], true, 2).is_err());
        assert!(SegmenterConfig::new(vec!["e.g.".into()], true, 0).is_err());
        assert!(SegmenterConfig::new(vec!["E.G.".into()], true, 1).is_ok());
    }

    #[test]
    fn emits_one_line_per_sentence() {
        let out = emit_sentence_lines(
            "First one here. Second one at https://example.org/a.b.c. Third\n one.",
            &SegmenterConfig::default(),
        );
        assert_eq!(
            out,
            "First one here.\nSecond one at https://example.org/a.b.c.\nThird one.\n"
        );
        assert_eq!(out.lines().count(), 3);
    }

    fn check_reconstruction(text: &str) {
        let cfg = SegmenterConfig::default();
        let sents = segment_sentences(text, &cfg);
        let chars: Vec<char> = text.chars().collect();
        let mut cursor = 0;
        let mut rebuilt = String::new();
        for (i, s) in sents.iter().enumerate() {
            assert_eq!(s.index, i);
            assert!(s.start >= cursor && s.start < s.end);
            let gap: String = chars[cursor..s.start].iter().collect();
            assert!(
                gap.chars().all(char::is_whitespace),
                "non-space gap {gap:?}"
            );
            assert_eq!(s.text, chars[s.start..s.end].iter().collect::<String>());
            assert!(!s.text.trim().is_empty());
            rebuilt.push_str(&gap);
            rebuilt.push_str(&s.text);
            cursor = s.end;
        }
        let tail: String = chars[cursor..].iter().collect();
        assert!(tail.chars().all(char::is_whitespace));
        rebuilt.push_str(&tail);
        assert_eq!(rebuilt, text);
        assert_eq!(sents, segment_sentences(text, &cfg));
    }

    proptest! {
        #[test]
        fn reconstruction_holds(text in "[A-Za-z0-9 .!?,()\"'\n:/@é-]{0,120}") {
            check_reconstruction(&text);
        }
    }
}

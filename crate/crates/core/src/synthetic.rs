//! Seeded synthetic corpora with known structure, for sanity checks of the classifier.
//!
//! * The keyword set: every sentence is a neutral frame with one label-specific keyword
//!   planted in it, so the keyword alone determines the label.
//! * The confound set: whole abstracts where result and conclusion sentences share the same
//!   surface keyword (`results`) and only their position and neighbours tell them apart.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classifier::{Example, SentenceContext};
use crate::corpus::{Abstract, AnnotatedAbstract, Annotation, LabelSet, MoveLabel, Span};

/// The keyword planted in every sentence of each label, in label order.
pub const PLANTED_KEYWORDS: [(MoveLabel, &str); 8] = [
    (MoveLabel::Background, "widely"),
    (MoveLabel::Gap, "however"),
    (MoveLabel::Purpose, "propose"),
    (MoveLabel::Method, "employ"),
    (MoveLabel::Result, "results"),
    (MoveLabel::Conclusion, "conclude"),
    (MoveLabel::Implication, "implications"),
    (MoveLabel::Contribution, "contribute"),
];

/// The word shared by result and conclusion sentences in the confound set.
pub const CONFOUND_WORD: &str = "results";

const NOUNS: &[&str] = &[
    "network", "signal", "corpus", "sensor", "dataset", "graph", "protein", "circuit", "image",
    "language", "robot", "alloy", "vehicle", "policy", "tensor", "camera", "reactor", "sample",
    "kernel", "turbine",
];
const ADJECTIVES: &[&str] = &[
    "large", "noisy", "sparse", "robust", "thermal", "neural", "linear", "stable", "dense",
    "hybrid", "compact", "dynamic",
];
const VERBS: &[&str] = &[
    "links", "shapes", "tracks", "covers", "limits", "drives", "maps", "joins", "moves", "holds",
];

/// Eight neutral frames; `K` marks the keyword slot, `N`, `A`, `V` random fillers.
const FRAMES: [&str; 8] = [
    "the A N K V the N .",
    "K the N V a A N in the N .",
    "this A N K V each N .",
    "for the N we K a A N .",
    "a A N and the N K V .",
    "the N K the A N of N .",
    "in A N the N V K .",
    "K N V A N with N .",
];

fn keyword(label: MoveLabel) -> &'static str {
    PLANTED_KEYWORDS[label.index()].1
}

/// One sentence of `label` built from a random frame.
pub fn keyword_sentence(label: MoveLabel, rng: &mut impl Rng) -> String {
    let frame = FRAMES.choose(rng).expect("frames");
    let words: Vec<&str> = frame
        .split(' ')
        .map(|slot| match slot {
            "K" => keyword(label),
            "N" => NOUNS.choose(rng).expect("nouns"),
            "A" => ADJECTIVES.choose(rng).expect("adjectives"),
            "V" => VERBS.choose(rng).expect("verbs"),
            other => other,
        })
        .collect();
    let mut s = words.join(" ");
    // "word ." -> "word."
    if let Some(stripped) = s.strip_suffix(" .") {
        s = format!("{stripped}.");
    }
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => s,
    }
}

/// Balanced single-sentence examples: `n_train` and `n_test` sentences cycling through the
/// eight labels.
pub fn keyword_dataset(n_train: usize, n_test: usize, seed: u64) -> (Vec<Example>, Vec<Example>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut make = |n: usize| -> Vec<Example> {
        (0..n)
            .map(|i| {
                let label = MoveLabel::ALL[i % 8];
                Example {
                    sentence: keyword_sentence(label, &mut rng),
                    context: SentenceContext::isolated(),
                    labels: LabelSet::single(label),
                }
            })
            .collect()
    };
    let train = make(n_train);
    let test = make(n_test);
    (train, test)
}

fn confound_sentence(label: MoveLabel, rng: &mut impl Rng) -> String {
    let label = if label == MoveLabel::Conclusion {
        MoveLabel::Result
    } else {
        label
    };
    keyword_sentence(label, rng)
}

/// Abstracts following `BAC [GAP] PUR MTD RST CLN`, where result and conclusion sentences
/// are drawn from the same distribution. Ids count up from 1.
pub fn confound_abstracts(n: usize, seed: u64) -> Vec<AnnotatedAbstract> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut labels = vec![MoveLabel::Background];
            if rng.random_bool(0.5) {
                labels.push(MoveLabel::Gap);
            }
            labels.extend([
                MoveLabel::Purpose,
                MoveLabel::Method,
                MoveLabel::Result,
                MoveLabel::Conclusion,
            ]);
            let mut text = String::new();
            let mut spans = Vec::new();
            for label in labels {
                if !text.is_empty() {
                    text.push(' ');
                }
                let start = text.chars().count();
                text.push_str(&confound_sentence(label, &mut rng));
                spans.push(Span::new(start, text.chars().count(), label));
            }
            let doc = Abstract::new(i as i64 + 1, text).expect("non-empty text");
            AnnotatedAbstract::new(doc, Annotation::manual(spans))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::validate;
    use crate::ingest::{segment_sentences, SegmenterConfig};

    #[test]
    fn keyword_sentences_contain_their_keyword_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for label in MoveLabel::ALL {
            for _ in 0..20 {
                let s = keyword_sentence(label, &mut rng);
                let lower = s.to_lowercase();
                let hits = lower
                    .split(|c: char| !c.is_alphanumeric())
                    .filter(|w| *w == keyword(label))
                    .count();
                assert_eq!(hits, 1, "{s}");
                assert!(s.ends_with('.'));
            }
        }
    }

    #[test]
    fn datasets_are_deterministic_and_balanced() {
        let (a, b) = keyword_dataset(16, 8, 3);
        assert_eq!(keyword_dataset(16, 8, 3), (a.clone(), b.clone()));
        assert_eq!(a.len(), 16);
        assert_eq!(
            a.iter()
                .filter(|e| e.labels.contains(MoveLabel::Gap))
                .count(),
            2
        );
    }

    #[test]
    fn confound_abstracts_are_valid_and_segment_per_span() {
        for aa in confound_abstracts(20, 9) {
            assert!(validate(&aa).is_empty());
            let sentences = segment_sentences(aa.text(), &SegmenterConfig::default());
            assert_eq!(sentences.len(), aa.spans().len());
            for (s, span) in sentences.iter().zip(aa.spans()) {
                assert_eq!((s.start, s.end), (span.start, span.end));
            }
        }
    }
}

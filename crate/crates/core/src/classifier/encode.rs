//! Turning a sentence and its neighbours into the four input id channels.
//!
//! Layout: `[CLS] target [SEP]` with segment 0, then the preceding sentences (farthest
//! first) and the following sentences (nearest first), each closed by `[SEP]`, with
//! segment 1. Over-long inputs lose context tokens first, trimmed from the far end of the
//! longest context sentence, then the tail of the target.

use serde::Serialize;

use super::tokenizer::Tokenizer;
use super::{ClassifierError, ModelConfig, Variant};
use crate::saliency::bucketize;

/// Number of buckets for the relative sentence position feature.
pub const POSITION_BUCKETS: usize = 10;

/// Where a sentence sits in its abstract.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SentenceContext {
    /// Preceding sentences, nearest last.
    pub prev: Vec<String>,
    /// Following sentences, nearest first.
    pub next: Vec<String>,
    pub position_index: usize,
    pub sentence_count: usize,
}

impl SentenceContext {
    /// Context of sentence `i` with up to `k` neighbours on each side.
    pub fn of<S: AsRef<str>>(sentences: &[S], i: usize, k: usize) -> SentenceContext {
        let lo = i.saturating_sub(k);
        let hi = (i + 1 + k).min(sentences.len());
        SentenceContext {
            prev: sentences[lo..i]
                .iter()
                .map(|s| s.as_ref().to_string())
                .collect(),
            next: sentences[i + 1..hi]
                .iter()
                .map(|s| s.as_ref().to_string())
                .collect(),
            position_index: i,
            sentence_count: sentences.len(),
        }
    }

    /// A sentence with no neighbours, treated as the only one in its abstract.
    pub fn isolated() -> SentenceContext {
        SentenceContext {
            sentence_count: 1,
            ..Default::default()
        }
    }
}

/// `floor(index / count · 10)`, clamped to the last bucket.
pub fn position_bucket(index: usize, count: usize) -> u32 {
    if count == 0 {
        return 0;
    }
    ((index * POSITION_BUCKETS) / count).min(POSITION_BUCKETS - 1) as u32
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EncodedSentence {
    pub token_ids: Vec<u32>,
    pub segment_ids: Vec<u32>,
    pub position_ids: Vec<u32>,
    pub saliency_bucket_ids: Vec<u32>,
    /// Relative sentence position bucket, when the feature is enabled.
    pub sentence_position: Option<u32>,
    pub truncated: bool,
    /// Words of the target sentence.
    pub words: Vec<String>,
    /// For each position, the target word it belongs to.
    pub word_of: Vec<Option<usize>>,
}

impl EncodedSentence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Copy with every piece of target word `w` replaced by `mask_id`.
    pub fn with_word_masked(&self, w: usize, mask_id: u32) -> EncodedSentence {
        let mut out = self.clone();
        for (id, owner) in out.token_ids.iter_mut().zip(&self.word_of) {
            if *owner == Some(w) {
                *id = mask_id;
            }
        }
        out
    }

    /// Copy whose target positions take the bucketized per-word saliency values.
    pub fn with_saliency(&self, buckets: &[u32]) -> EncodedSentence {
        let mut out = self.clone();
        for (b, owner) in out.saliency_bucket_ids.iter_mut().zip(&self.word_of) {
            if let Some(w) = owner {
                *b = buckets[*w];
            }
        }
        out
    }
}

/// Trims context pieces until they fit in `budget` positions (one `[SEP]` each).
fn fit_context(prev: &mut Vec<Vec<u32>>, next: &mut Vec<Vec<u32>>, budget: usize) -> bool {
    let cost = |p: &Vec<Vec<u32>>, q: &Vec<Vec<u32>>| -> usize {
        p.iter().chain(q.iter()).map(|s| s.len() + 1).sum()
    };
    let mut truncated = false;
    while cost(prev, next) > budget {
        truncated = true;
        let longest_prev = prev
            .iter()
            .enumerate()
            .max_by_key(|(i, s)| (s.len(), usize::MAX - i));
        let longest_next = next.iter().enumerate().max_by_key(|(i, s)| (s.len(), *i));
        let take_prev = match (longest_prev, longest_next) {
            (Some((_, a)), Some((_, b))) => a.len() >= b.len(),
            (Some(_), None) => true,
            _ => false,
        };
        if take_prev {
            let i = longest_prev.map(|(i, _)| i).expect("non-empty");
            if prev[i].len() <= 1 {
                prev.remove(i);
            } else {
                prev[i].remove(0);
            }
        } else {
            let i = longest_next.map(|(i, _)| i).expect("non-empty");
            if next[i].len() <= 1 {
                next.remove(i);
            } else {
                next[i].pop();
            }
        }
    }
    truncated
}

/// Builds the input channels for `target`.
///
/// `saliency`, when given, holds one value in `[-1, 1]` per target word; it is only used by
/// the saliency variant. Neighbours and position are ignored by the plain variant.
pub fn encode(
    tok: &Tokenizer,
    cfg: &ModelConfig,
    target: &str,
    ctx: &SentenceContext,
    saliency: Option<&[f64]>,
) -> Result<EncodedSentence, ClassifierError> {
    let max_len = cfg.encoder.max_len;
    let neutral = (cfg.saliency_buckets as u32 - 1) / 2;
    let t = tok.tokenize(target);
    if let Some(values) = saliency {
        if values.len() != t.words.len() {
            return Err(ClassifierError::Input(format!(
                "saliency has {} values for {} words",
                values.len(),
                t.words.len()
            )));
        }
    }
    let uses_context = cfg.variant != Variant::Plain;
    let k = if uses_context { cfg.context_window } else { 0 };
    let keep_prev = ctx.prev.len().saturating_sub(k);
    let mut prev: Vec<Vec<u32>> = ctx.prev[keep_prev..]
        .iter()
        .map(|s| tok.tokenize(s).ids)
        .filter(|ids| !ids.is_empty())
        .collect();
    let mut next: Vec<Vec<u32>> = ctx
        .next
        .iter()
        .take(k)
        .map(|s| tok.tokenize(s).ids)
        .filter(|ids| !ids.is_empty())
        .collect();

    let mut target_ids = t.ids;
    let mut target_words = t.word_of;
    let truncated = if target_ids.len() + 2 > max_len {
        target_ids.truncate(max_len - 2);
        target_words.truncate(max_len - 2);
        prev.clear();
        next.clear();
        true
    } else {
        fit_context(&mut prev, &mut next, max_len - 2 - target_ids.len())
    };

    let mut token_ids = Vec::with_capacity(max_len);
    let mut segment_ids = Vec::with_capacity(max_len);
    let mut word_of = Vec::with_capacity(max_len);
    token_ids.push(tok.cls_id());
    segment_ids.push(0);
    word_of.push(None);
    for (id, w) in target_ids.iter().zip(&target_words) {
        token_ids.push(*id);
        segment_ids.push(0);
        word_of.push(Some(*w));
    }
    token_ids.push(tok.sep_id());
    segment_ids.push(0);
    word_of.push(None);
    for piece in prev.iter().chain(next.iter()) {
        for id in piece.iter().copied().chain(std::iter::once(tok.sep_id())) {
            token_ids.push(id);
            segment_ids.push(1);
            word_of.push(None);
        }
    }

    let mut saliency_bucket_ids = vec![neutral; token_ids.len()];
    if let (Some(values), Variant::Saliency) = (saliency, cfg.variant) {
        let buckets = bucketize(values, cfg.saliency_buckets)?;
        for (b, owner) in saliency_bucket_ids.iter_mut().zip(&word_of) {
            if let Some(w) = owner {
                *b = buckets[*w];
            }
        }
    }
    let position_ids = (0..token_ids.len() as u32).collect();
    let sentence_position = (uses_context && cfg.sentence_position_feature)
        .then(|| position_bucket(ctx.position_index, ctx.sentence_count));
    Ok(EncodedSentence {
        token_ids,
        segment_ids,
        position_ids,
        saliency_bucket_ids,
        sentence_position,
        truncated,
        words: t.words,
        word_of,
    })
}

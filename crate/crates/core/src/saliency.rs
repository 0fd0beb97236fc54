//! Leave-one-word-out saliency and its bucketization into the saliency input channel.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::encode::EncodedSentence;
use crate::corpus::MoveLabel;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SaliencyError {
    #[error("saliency bucket count must be odd and at least 3, got {0}")]
    BadBucketCount(usize),
    #[error("the vocabulary has no mask token")]
    NoMaskToken,
}

/// Anything that maps an encoded sentence to eight label probabilities.
pub trait LabelScorer {
    fn label_probabilities(&self, x: &EncodedSentence) -> [f64; 8];

    /// Token id used to hide a word.
    fn mask_id(&self) -> Option<u32>;
}

/// Per-word importance for one label; the JSON form is also the debug dump format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyVector {
    pub words: Vec<String>,
    pub values: Vec<f64>,
    pub label: MoveLabel,
}

impl SaliencyVector {
    /// Index of the highest value; the first one wins ties.
    pub fn top_word(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, v) in self.values.iter().enumerate() {
            if best.is_none_or(|b| *v > self.values[b]) {
                best = Some(i);
            }
        }
        best
    }
}

/// `s(w) = p(label | x) − p(label | x with every piece of w masked)`, clipped to `[-1, 1]`.
///
/// `x` should carry the neutral saliency channel. Words cut off by truncation have no
/// pieces to mask and score 0.
pub fn occlusion_saliency<M: LabelScorer + ?Sized>(
    model: &M,
    x: &EncodedSentence,
    label: MoveLabel,
) -> Result<SaliencyVector, SaliencyError> {
    let mask = model.mask_id().ok_or(SaliencyError::NoMaskToken)?;
    let base = model.label_probabilities(x)[label.index()];
    let values = (0..x.words.len())
        .map(|w| {
            let occluded = model.label_probabilities(&x.with_word_masked(w, mask))[label.index()];
            (base - occluded).clamp(-1.0, 1.0)
        })
        .collect();
    Ok(SaliencyVector {
        words: x.words.clone(),
        values,
        label,
    })
}

/// Maps values in `[-1, 1]` to `B` equal-width buckets: `floor((v + 1) / 2 · B)`, clamped to
/// `B − 1`. Out-of-range values are clipped (NaN counts as 0) with a warning.
pub fn bucketize(values: &[f64], buckets: usize) -> Result<Vec<u32>, SaliencyError> {
    if buckets < 3 || buckets.is_multiple_of(2) {
        return Err(SaliencyError::BadBucketCount(buckets));
    }
    let b = buckets as f64;
    Ok(values
        .iter()
        .map(|&v| {
            let v = if v.is_nan() {
                tracing::warn!("NaN saliency value treated as 0");
                0.0
            } else if !(-1.0..=1.0).contains(&v) {
                tracing::warn!(value = v, "saliency value outside [-1, 1] clipped");
                v.clamp(-1.0, 1.0)
            } else {
                v
            };
            // The small offset keeps grid points such as -1 + 2i/B from landing just below i.
            let id = ((v + 1.0) / 2.0 * b + 1e-9).floor() as usize;
            id.min(buckets - 1) as u32
        })
        .collect())
}

//! Multi-label move recognition per sentence.
//!
//! Three variants share one encoder: `plain` sees only the sentence, `context` adds the
//! neighbouring sentences and a relative position feature, and `saliency` further feeds
//! bucketized occlusion saliency of the sentence's words back in through a second pass.

pub mod artifact;
pub mod encode;
pub mod network;
pub mod tokenizer;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::corpus::{
    align_spans_to_sentences, Abstract, AlignError, AnnotatedAbstract, Annotation, LabelSet,
    MoveLabel, Sentence, Span,
};
use crate::ingest::{segment_sentences, SegmenterConfig};
use crate::saliency::{bucketize, occlusion_saliency, LabelScorer, SaliencyError, SaliencyVector};

pub use encode::{encode, EncodedSentence, SentenceContext};
pub use network::{sigmoid, Layout};
pub use tokenizer::Tokenizer;
pub use train::{bce_loss, train, EpochMetrics, Example};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("model was trained as {model} but {requested} was requested")]
    VariantMismatch { model: Variant, requested: Variant },
    #[error("training set is empty")]
    EmptyDataset,
    #[error("loss became NaN at epoch {epoch}, batch {batch} (example {example}, last finite loss {last_loss})")]
    NanLoss {
        epoch: usize,
        batch: usize,
        example: usize,
        last_loss: f64,
    },
    #[error("model artifact: {0}")]
    Artifact(String),
    #[error(transparent)]
    Saliency(#[from] SaliencyError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Plain,
    Context,
    Saliency,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Plain, Variant::Context, Variant::Saliency];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Plain => "plain",
            Variant::Context => "context",
            Variant::Saliency => "saliency",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = ClassifierError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "plain" => Ok(Variant::Plain),
            "context" | "+context" => Ok(Variant::Context),
            "saliency" | "+saliency" => Ok(Variant::Saliency),
            other => Err(ClassifierError::Config(format!(
                "unknown variant {other:?} (expected plain, context or saliency)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    pub max_len: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_size: 8000,
            hidden: 128,
            layers: 2,
            heads: 4,
            ffn: 256,
            max_len: 128,
        }
    }
}

impl EncoderConfig {
    /// A very small encoder for tests and synthetic data.
    pub fn toy(vocab_size: usize) -> Self {
        EncoderConfig {
            vocab_size,
            hidden: 32,
            layers: 1,
            heads: 2,
            ffn: 64,
            max_len: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Neighbour sentences on each side (context and saliency variants).
    pub context_window: usize,
    pub sentence_position_feature: bool,
    pub saliency_buckets: usize,
    pub decision_threshold: f64,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::for_variant(Variant::Plain)
    }
}

impl ModelConfig {
    pub fn for_variant(variant: Variant) -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            context_window: 1,
            sentence_position_feature: variant != Variant::Plain,
            saliency_buckets: 11,
            decision_threshold: 0.5,
            variant,
        }
    }

    pub fn check(&self) -> Result<(), ClassifierError> {
        let e = &self.encoder;
        let bad = |m: String| Err(ClassifierError::Config(m));
        if self.saliency_buckets < 3 || self.saliency_buckets.is_multiple_of(2) {
            return bad(format!(
                "saliency_buckets must be odd and at least 3, got {}",
                self.saliency_buckets
            ));
        }
        if !(self.decision_threshold > 0.0 && self.decision_threshold < 1.0) {
            return bad(format!(
                "decision_threshold must be in (0, 1), got {}",
                self.decision_threshold
            ));
        }
        if e.hidden == 0 || e.heads == 0 || !e.hidden.is_multiple_of(e.heads) {
            return bad(format!(
                "hidden size {} must be a positive multiple of heads {}",
                e.hidden, e.heads
            ));
        }
        if e.ffn == 0 {
            return bad("ffn size must be positive".into());
        }
        if e.max_len < 3 {
            return bad(format!("max_len {} is too small", e.max_len));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassWeighting {
    None,
    InverseFrequency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Epochs without dev improvement before stopping; `None` disables early stopping.
    pub patience: Option<usize>,
    pub class_weighting: ClassWeighting,
    /// Global gradient-norm cap.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 16,
            learning_rate: 2e-3,
            seed: 13,
            patience: Some(4),
            class_weighting: ClassWeighting::None,
            clip_norm: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<(), ClassifierError> {
        if self.batch_size == 0 {
            return Err(ClassifierError::Config(
                "batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(ClassifierError::Config(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probabilities: [f64; 8],
    pub labels: LabelSet,
    pub scores_source: Variant,
}

impl Prediction {
    /// Labels at or above `threshold`, or the single most probable label when none is.
    pub fn from_probabilities(probabilities: [f64; 8], threshold: f64, source: Variant) -> Self {
        let mut labels: LabelSet = MoveLabel::ALL
            .into_iter()
            .filter(|l| probabilities[l.index()] >= threshold)
            .collect();
        if labels.is_empty() {
            labels.insert(argmax(&probabilities));
        }
        Prediction {
            probabilities,
            labels,
            scores_source: source,
        }
    }

    pub fn probability(&self, label: MoveLabel) -> f64 {
        self.probabilities[label.index()]
    }

    /// Most probable label (first in canonical order on ties).
    pub fn top_label(&self) -> MoveLabel {
        argmax(&self.probabilities)
    }
}

impl Serialize for Prediction {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        struct Probs<'a>(&'a [f64; 8]);
        impl Serialize for Probs<'_> {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                let mut map = serializer.serialize_map(Some(8))?;
                for l in MoveLabel::ALL {
                    map.serialize_entry(l.code(), &self.0[l.index()])?;
                }
                map.end()
            }
        }
        let mut map = serializer.serialize_map(Some(3))?;
        map.serialize_entry("probabilities", &Probs(&self.probabilities))?;
        map.serialize_entry("labels", &self.labels)?;
        map.serialize_entry("scores_source", &self.scores_source)?;
        map.end()
    }
}

pub fn argmax(p: &[f64; 8]) -> MoveLabel {
    let mut best = 0;
    for i in 1..8 {
        if p[i] > p[best] {
            best = i;
        }
    }
    MoveLabel::from_index(best).expect("index below 8")
}

/// A trained classifier; immutable once built and safe to share across threads.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub tokenizer: Tokenizer,
    pub layout: Layout,
    pub params: Vec<f64>,
    pub version: String,
    pub history: Vec<EpochMetrics>,
}

/// Result of labelling a whole abstract.
#[derive(Debug, Clone)]
pub struct AbstractPrediction {
    pub annotation: Annotation,
    pub sentences: Vec<Sentence>,
    pub predictions: Vec<Prediction>,
}

impl LabelScorer for Model {
    fn label_probabilities(&self, x: &EncodedSentence) -> [f64; 8] {
        self.probabilities(x)
    }

    fn mask_id(&self) -> Option<u32> {
        self.tokenizer.id(tokenizer::MASK)
    }
}

/// 64-bit FNV-1a, used for short content-derived model versions.
fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl Model {
    /// An untrained model with seeded random weights.
    pub fn initialize(
        config: ModelConfig,
        tokenizer: Tokenizer,
        rng: &mut impl rand::Rng,
    ) -> Result<Model, ClassifierError> {
        let mut config = config;
        config.encoder.vocab_size = tokenizer.len();
        config.check()?;
        let layout = Layout::new(&config.encoder, config.saliency_buckets);
        let params = layout.init(rng);
        let mut model = Model {
            config,
            tokenizer,
            layout,
            params,
            version: String::new(),
            history: Vec::new(),
        };
        model.refresh_version();
        Ok(model)
    }

    /// Recomputes the version tag from the variant and a hash of the weights.
    pub fn refresh_version(&mut self) {
        let hash = fnv1a(self.params.iter().flat_map(|v| v.to_le_bytes()));
        self.version = format!("{}-{:016x}", self.config.variant, hash);
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    /// Fails unless the model was trained as `requested`.
    pub fn expect_variant(&self, requested: Variant) -> Result<(), ClassifierError> {
        if self.config.variant != requested {
            return Err(ClassifierError::VariantMismatch {
                model: self.config.variant,
                requested,
            });
        }
        Ok(())
    }

    pub fn logits(&self, x: &EncodedSentence) -> [f64; 8] {
        self.layout.forward(&self.params, x, false).logits
    }

    /// Independent per-label probabilities.
    pub fn probabilities(&self, x: &EncodedSentence) -> [f64; 8] {
        self.logits(x).map(sigmoid)
    }

    /// Encodes with this model's tokenizer and configuration.
    pub fn encode(
        &self,
        sentence: &str,
        ctx: &SentenceContext,
        saliency: Option<&[f64]>,
    ) -> Result<EncodedSentence, ClassifierError> {
        encode(&self.tokenizer, &self.config, sentence, ctx, saliency)
    }

    /// Mean binary cross-entropy of one example over the eight heads.
    pub fn example_loss(&self, x: &EncodedSentence, gold: LabelSet) -> f64 {
        bce_loss(&self.logits(x), gold, &[1.0; 8]).0
    }

    /// Gradient of [`Model::example_loss`] w.r.t. every parameter.
    pub fn example_gradient(&self, x: &EncodedSentence, gold: LabelSet) -> Vec<f64> {
        let fwd = self.layout.forward(&self.params, x, true);
        let (_, dlogits) = bce_loss(&fwd.logits, gold, &[1.0; 8]);
        let mut grad = vec![0.0; self.params.len()];
        let cache = fwd.cache.expect("cache requested");
        self.layout
            .backward(&self.params, x, &cache, &dlogits, &mut grad);
        grad
    }

    /// Occlusion saliency of `sentence` for `label`, on the neutral-channel encoding.
    pub fn saliency(
        &self,
        sentence: &str,
        ctx: &SentenceContext,
        label: MoveLabel,
    ) -> Result<SaliencyVector, ClassifierError> {
        let x = self.encode(sentence, ctx, None)?;
        Ok(occlusion_saliency(self, &x, label)?)
    }

    /// The saliency variant's second-pass input: saliency for the provisional top label,
    /// bucketized onto the target words.
    pub(crate) fn salient_input(
        &self,
        neutral: &EncodedSentence,
        label: MoveLabel,
    ) -> Result<EncodedSentence, ClassifierError> {
        let sv = occlusion_saliency(self, neutral, label)?;
        let buckets = bucketize(&sv.values, self.config.saliency_buckets)?;
        Ok(neutral.with_saliency(&buckets))
    }

    /// First-pass probabilities: the neutral-saliency encoding.
    pub fn provisional_probabilities(
        &self,
        sentence: &str,
        ctx: &SentenceContext,
    ) -> Result<[f64; 8], ClassifierError> {
        Ok(self.probabilities(&self.encode(sentence, ctx, None)?))
    }

    pub fn predict(
        &self,
        sentence: &str,
        ctx: &SentenceContext,
    ) -> Result<Prediction, ClassifierError> {
        let x = self.encode(sentence, ctx, None)?;
        self.predict_encoded(&x)
    }

    /// Predicts from a neutral-channel encoding, running the second pass when needed.
    pub fn predict_encoded(&self, x: &EncodedSentence) -> Result<Prediction, ClassifierError> {
        let tau = self.config.decision_threshold;
        let first = self.probabilities(x);
        if self.config.variant != Variant::Saliency {
            return Ok(Prediction::from_probabilities(
                first,
                tau,
                self.config.variant,
            ));
        }
        let second = self.probabilities(&self.salient_input(x, argmax(&first))?);
        Ok(Prediction::from_probabilities(
            second,
            tau,
            Variant::Saliency,
        ))
    }

    /// Predicts each sentence with its neighbours and position.
    pub fn predict_sentences<S: AsRef<str>>(
        &self,
        sentences: &[S],
    ) -> Result<Vec<Prediction>, ClassifierError> {
        (0..sentences.len())
            .map(|i| {
                let ctx = SentenceContext::of(sentences, i, self.config.context_window);
                self.predict(sentences[i].as_ref(), &ctx)
            })
            .collect()
    }

    /// Segments and labels an abstract: one sentence-extent span per sentence carrying its
    /// most probable predicted label, all with provenance `auto`.
    pub fn predict_abstract(
        &self,
        doc: &Abstract,
        segmenter: &SegmenterConfig,
    ) -> Result<AbstractPrediction, ClassifierError> {
        let sentences = segment_sentences(&doc.text, segmenter);
        if sentences.is_empty() {
            tracing::warn!(id = %doc.id, "abstract has no sentences; empty annotation");
            return Ok(AbstractPrediction {
                annotation: Annotation::default(),
                sentences,
                predictions: Vec::new(),
            });
        }
        let texts: Vec<&str> = sentences.iter().map(|s| s.text.as_str()).collect();
        let predictions = self.predict_sentences(&texts)?;
        let spans = sentences
            .iter()
            .zip(&predictions)
            .map(|(s, p)| {
                let label = p
                    .labels
                    .iter()
                    .max_by(|a, b| {
                        p.probability(*a)
                            .total_cmp(&p.probability(*b))
                            .then(b.cmp(a))
                    })
                    .expect("at least one label");
                Span::new(s.start, s.end, label)
            })
            .collect();
        Ok(AbstractPrediction {
            annotation: Annotation::auto(spans, self.version.clone()),
            sentences,
            predictions,
        })
    }
}

/// Turns annotated abstracts into per-sentence training examples.
///
/// Sentences no span touches are skipped; the count of skipped sentences is returned.
pub fn examples_from_corpus(
    records: &[AnnotatedAbstract],
    segmenter: &SegmenterConfig,
    context_window: usize,
) -> Result<(Vec<Example>, usize), ClassifierError> {
    let mut out = Vec::new();
    let mut skipped = 0;
    for r in records {
        let sentences = segment_sentences(r.text(), segmenter);
        let sets = align_spans_to_sentences(r, &sentences)?;
        let texts: Vec<&str> = sentences.iter().map(|s| s.text.as_str()).collect();
        for (i, set) in sets.into_iter().enumerate() {
            if set.is_empty() {
                skipped += 1;
                continue;
            }
            out.push(Example {
                sentence: texts[i].to_string(),
                context: SentenceContext::of(&texts, i, context_window),
                labels: set,
            });
        }
    }
    Ok((out, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_and_fallback() {
        let mut p = [0.1; 8];
        p[MoveLabel::Purpose.index()] = 0.7;
        p[MoveLabel::Method.index()] = 0.5;
        let pred = Prediction::from_probabilities(p, 0.5, Variant::Plain);
        assert_eq!(pred.labels.to_string(), "{PUR,MTD}");

        let mut low = [0.2; 8];
        low[MoveLabel::Gap.index()] = 0.3;
        let pred = Prediction::from_probabilities(low, 0.5, Variant::Plain);
        assert_eq!(pred.labels, LabelSet::single(MoveLabel::Gap));
    }

    #[test]
    fn config_checks() {
        let mut c = ModelConfig::default();
        assert!(c.check().is_ok());
        c.saliency_buckets = 10;
        assert!(c.check().is_err());
        let mut c = ModelConfig::default();
        c.decision_threshold = 1.0;
        assert!(c.check().is_err());
        let mut c = ModelConfig::default();
        c.encoder.heads = 3;
        assert!(c.check().is_err());
    }

    #[test]
    fn variant_names_parse() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("bert".parse::<Variant>().is_err());
    }

    #[test]
    fn prediction_json_lists_every_label() {
        let pred = Prediction::from_probabilities([0.6; 8], 0.5, Variant::Context);
        let v = serde_json::to_value(&pred).unwrap();
        assert_eq!(v["probabilities"].as_object().unwrap().len(), 8);
        assert_eq!(v["scores_source"], "context");
    }
}

//! Numerical and behavioural checks of the encoder, its gradients and occlusion saliency.

use movekit::classifier::encode::{EncodedSentence, SentenceContext};
use movekit::classifier::tokenizer::Tokenizer;
use movekit::classifier::{train, EncoderConfig, Model, ModelConfig, TrainConfig, Variant};
use movekit::corpus::{validate, Abstract, Provenance};
use movekit::ingest::SegmenterConfig;
use movekit::saliency::{bucketize, occlusion_saliency, LabelScorer};
use movekit::synthetic::keyword_dataset;
use movekit::{LabelSet, MoveLabel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SENTENCES: [&str; 4] = [
    "Transformers are widely used for text.",
    "However the cost of attention remains high.",
    "We propose a sparse variant with linear cost.",
    "Our results show a large speedup.",
];

fn toy_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig::toy(120),
        ..ModelConfig::for_variant(variant)
    }
}

fn random_model(variant: Variant, seed: u64) -> Model {
    let tok = Tokenizer::train(SENTENCES, 120).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Model::initialize(toy_config(variant), tok, &mut rng).unwrap()
}

/// A model trained on the balanced keyword sentences.
fn keyword_model(variant: Variant) -> Model {
    let (train_set, _) = keyword_dataset(320, 0, 5);
    let tc = TrainConfig {
        epochs: 8,
        batch_size: 16,
        learning_rate: 3e-3,
        seed: 2,
        patience: None,
        ..TrainConfig::default()
    };
    let mc = ModelConfig {
        encoder: EncoderConfig::toy(200),
        ..ModelConfig::for_variant(variant)
    };
    train(&train_set, None, &tc, &mc).unwrap()
}

fn context_input(model: &Model) -> EncodedSentence {
    let ctx = SentenceContext::of(&SENTENCES, 2, model.config.context_window);
    let x = model.encode(SENTENCES[2], &ctx, None).unwrap();
    // A non-neutral saliency channel exercises the saliency embeddings too.
    let b = model.config.saliency_buckets as u32;
    let buckets: Vec<u32> = (0..x.words.len()).map(|i| i as u32 % b).collect();
    x.with_saliency(&buckets)
}

fn check_gradient(variant: Variant, seed: u64) {
    let model = random_model(variant, seed);
    let x = context_input(&model);
    let gold = LabelSet::from_bits(0b0010_0100);
    let grad = model.example_gradient(&x, gold);
    let candidates: Vec<usize> = (0..grad.len()).filter(|&i| grad[i].abs() > 1e-6).collect();
    assert!(candidates.len() >= 20);

    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let h = 1e-5;
    for _ in 0..20 {
        let i = candidates[rng.random_range(0..candidates.len())];
        let mut probe = model.clone();
        probe.params[i] += h;
        let up = probe.example_loss(&x, gold);
        probe.params[i] -= 2.0 * h;
        let down = probe.example_loss(&x, gold);
        let numeric = (up - down) / (2.0 * h);
        let rel = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs());
        assert!(
            rel <= 1e-3,
            "param {i}: analytic {} numeric {numeric} rel {rel}",
            grad[i]
        );
    }
}

#[test]
fn gradients_match_central_differences() {
    check_gradient(Variant::Saliency, 7);
    check_gradient(Variant::Context, 8);
    check_gradient(Variant::Plain, 9);
}

#[test]
fn plain_predictions_ignore_context_bitwise() {
    let model = random_model(Variant::Plain, 3);
    for (i, sentence) in SENTENCES.iter().enumerate() {
        let with = model
            .predict(sentence, &SentenceContext::of(&SENTENCES, i, 2))
            .unwrap();
        let without = model
            .predict(sentence, &SentenceContext::isolated())
            .unwrap();
        let bits = |p: [f64; 8]| p.map(f64::to_bits);
        assert_eq!(bits(with.probabilities), bits(without.probabilities));
    }
}

#[test]
fn context_variant_sees_neighbours() {
    let model = random_model(Variant::Context, 3);
    let with = model
        .provisional_probabilities(SENTENCES[1], &SentenceContext::of(&SENTENCES, 1, 1))
        .unwrap();
    let without = model
        .provisional_probabilities(SENTENCES[1], &SentenceContext::isolated())
        .unwrap();
    assert_ne!(with, without);
}

#[test]
fn all_zero_saliency_is_the_neutral_first_pass() {
    let model = random_model(Variant::Saliency, 4);
    let ctx = SentenceContext::of(&SENTENCES, 3, model.config.context_window);
    let neutral = model.encode(SENTENCES[3], &ctx, None).unwrap();
    let zeros = vec![0.0; neutral.words.len()];
    let buckets = bucketize(&zeros, model.config.saliency_buckets).unwrap();
    let explicit = neutral.with_saliency(&buckets);
    let a = model.probabilities(&neutral);
    let b = model.probabilities(&explicit);
    let first = model.provisional_probabilities(SENTENCES[3], &ctx).unwrap();
    for k in 0..8 {
        assert!((a[k] - b[k]).abs() <= 1e-6);
        assert!((a[k] - first[k]).abs() <= 1e-6);
    }
}

struct Constant;

impl LabelScorer for Constant {
    fn label_probabilities(&self, _: &EncodedSentence) -> [f64; 8] {
        [0.3; 8]
    }

    fn mask_id(&self) -> Option<u32> {
        Some(4)
    }
}

#[test]
fn constant_scorers_give_zero_saliency() {
    let mut model = random_model(Variant::Plain, 5);
    let x = model
        .encode(SENTENCES[0], &SentenceContext::isolated(), None)
        .unwrap();
    let sv = occlusion_saliency(&Constant, &x, MoveLabel::Method).unwrap();
    assert!(sv.values.iter().all(|v| *v == 0.0));
    assert_eq!(sv.words.len(), x.words.len());

    // With zero weights every input maps to the same logits.
    model.params.iter_mut().for_each(|p| *p = 0.0);
    let sv = model
        .saliency(
            SENTENCES[0],
            &SentenceContext::isolated(),
            MoveLabel::Background,
        )
        .unwrap();
    assert!(sv.values.iter().all(|v| *v == 0.0), "{:?}", sv.values);
}

#[test]
fn occlusion_is_reproducible() {
    let model = random_model(Variant::Context, 6);
    let ctx = SentenceContext::of(&SENTENCES, 0, 2);
    let a = model.saliency(SENTENCES[0], &ctx, MoveLabel::Gap).unwrap();
    let b = model.saliency(SENTENCES[0], &ctx, MoveLabel::Gap).unwrap();
    assert_eq!(a, b);
    assert!(a.values.iter().all(|v| (-1.0..=1.0).contains(v)));
}

#[test]
fn trained_model_attributes_keyword_to_its_label() {
    let model = keyword_model(Variant::Plain);
    let sentence = "The dense network results the sparse signal.";
    let ctx = SentenceContext::isolated();
    let rst = model.saliency(sentence, &ctx, MoveLabel::Result).unwrap();
    let bac = model
        .saliency(sentence, &ctx, MoveLabel::Background)
        .unwrap();
    let w = rst.words.iter().position(|w| w == "results").unwrap();
    assert!(
        rst.values[w] > bac.values[w],
        "{} vs {}",
        rst.values[w],
        bac.values[w]
    );
    assert_eq!(rst.top_word(), Some(w));
    assert_eq!(
        model.predict(sentence, &ctx).unwrap().top_label(),
        MoveLabel::Result
    );
}

#[test]
fn abstract_prediction_labels_each_sentence() {
    let model = random_model(Variant::Context, 10);
    let doc = Abstract::new(77, SENTENCES.join(" ")).unwrap();
    let out = model
        .predict_abstract(&doc, &SegmenterConfig::default())
        .unwrap();
    assert_eq!(out.sentences.len(), 4);
    assert_eq!(out.predictions.len(), 4);
    assert_eq!(out.annotation.spans.len(), 4);
    assert_eq!(
        out.annotation.model_version.as_deref(),
        Some(model.version.as_str())
    );
    for ((span, s), p) in out
        .annotation
        .spans
        .iter()
        .zip(&out.sentences)
        .zip(&out.predictions)
    {
        assert_eq!((span.start, span.end), (s.start, s.end));
        assert!(p.labels.contains(span.label));
    }
    assert!(out
        .annotation
        .provenance
        .iter()
        .all(|p| *p == Provenance::Auto));
    let record = movekit::AnnotatedAbstract::new(doc, out.annotation);
    assert!(validate(&record).is_empty());
}

#[test]
fn saved_model_predicts_identically() {
    let model = random_model(Variant::Saliency, 12);
    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path()).unwrap();
    let loaded = Model::load(dir.path()).unwrap();
    assert_eq!(loaded.version, model.version);
    let ctx = SentenceContext::of(&SENTENCES, 1, 2);
    let a = model.predict(SENTENCES[1], &ctx).unwrap();
    let b = loaded.predict(SENTENCES[1], &ctx).unwrap();
    assert_eq!(a.probabilities, b.probabilities);
}

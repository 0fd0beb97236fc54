//! Mini-batch Adam training with mean binary cross-entropy over the eight heads.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    argmax, ClassWeighting, ClassifierError, EncodedSentence, Model, ModelConfig, SentenceContext,
    Tokenizer, TrainConfig, Variant,
};
use crate::corpus::{LabelSet, MoveLabel};
use crate::eval::micro_prf_aligned;

const ADAM_B1: f64 = 0.9;
const ADAM_B2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const MAX_POS_WEIGHT: f64 = 100.0;

/// One labelled sentence with its surroundings.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub sentence: String,
    pub context: SentenceContext,
    pub labels: LabelSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub dev_micro_f1: Option<f64>,
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean over the heads of `−(w·y·log σ(z) + (1−y)·log(1−σ(z)))` and its derivative w.r.t.
/// the logits; `w` is the per-label positive weight.
pub fn bce_loss(logits: &[f64; 8], gold: LabelSet, pos_weight: &[f64; 8]) -> (f64, [f64; 8]) {
    let mut loss = 0.0;
    let mut grad = [0.0; 8];
    for l in MoveLabel::ALL {
        let i = l.index();
        let z = logits[i];
        let p = super::sigmoid(z);
        if gold.contains(l) {
            loss += pos_weight[i] * softplus(-z);
            grad[i] = pos_weight[i] * (p - 1.0) / 8.0;
        } else {
            loss += softplus(z);
            grad[i] = p / 8.0;
        }
    }
    (loss / 8.0, grad)
}

fn positive_weights(examples: &[Example], weighting: ClassWeighting) -> [f64; 8] {
    let mut w = [1.0; 8];
    if weighting == ClassWeighting::InverseFrequency {
        let n = examples.len() as f64;
        for l in MoveLabel::ALL {
            let pos = examples.iter().filter(|e| e.labels.contains(l)).count() as f64;
            if pos > 0.0 {
                w[l.index()] = ((n - pos) / pos).clamp(1.0, MAX_POS_WEIGHT);
            }
        }
    }
    w
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - ADAM_B1.powi(self.t);
        let c2 = 1.0 - ADAM_B2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = ADAM_B1 * self.m[i] + (1.0 - ADAM_B1) * g;
            self.v[i] = ADAM_B2 * self.v[i] + (1.0 - ADAM_B2) * g * g;
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + ADAM_EPS);
        }
    }
}

/// Dev micro-F1 (percent) of the current weights.
fn dev_f1(model: &Model, dev: &[(EncodedSentence, LabelSet)]) -> Result<f64, ClassifierError> {
    let mut gold = Vec::with_capacity(dev.len());
    let mut pred = Vec::with_capacity(dev.len());
    for (x, labels) in dev {
        gold.push(*labels);
        pred.push(model.predict_encoded(x)?.labels);
    }
    Ok(micro_prf_aligned(&gold, &pred).f1)
}

/// For the saliency variant: the input carrying saliency computed against the gold label
/// the current model rates highest.
fn teacher_forced(
    model: &Model,
    x: &EncodedSentence,
    gold: LabelSet,
) -> Result<EncodedSentence, ClassifierError> {
    let p = model.probabilities(x);
    let mut masked = [f64::NEG_INFINITY; 8];
    for l in gold.iter() {
        masked[l.index()] = p[l.index()];
    }
    model.salient_input(x, argmax(&masked))
}

/// Trains a model from scratch; the vocabulary is learned from the training sentences.
///
/// With a dev set, every epoch is scored and the best epoch's weights are kept. The
/// saliency variant spends the first half of the epochs on neutral inputs only and then
/// also trains on inputs carrying saliency for the gold label.
pub fn train(
    train_set: &[Example],
    dev: Option<&[Example]>,
    tc: &TrainConfig,
    mc: &ModelConfig,
) -> Result<Model, ClassifierError> {
    tc.check()?;
    mc.check()?;
    if train_set.is_empty() {
        tracing::warn!("training set is empty");
        return Err(ClassifierError::EmptyDataset);
    }
    if let Some(e) = train_set.iter().position(|e| e.labels.is_empty()) {
        return Err(ClassifierError::Input(format!(
            "training example {e} has no labels"
        )));
    }
    for l in MoveLabel::ALL {
        if !train_set.iter().any(|e| e.labels.contains(l)) {
            tracing::warn!(label = l.code(), "label absent from training data");
        }
    }

    let texts = train_set.iter().flat_map(|e| {
        std::iter::once(e.sentence.as_str())
            .chain(e.context.prev.iter().map(String::as_str))
            .chain(e.context.next.iter().map(String::as_str))
    });
    let tokenizer = Tokenizer::train(texts, mc.encoder.vocab_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut model = Model::initialize(mc.clone(), tokenizer, &mut rng)?;

    let pos_weight = positive_weights(train_set, tc.class_weighting);
    let encode_all =
        |set: &[Example], m: &Model| -> Result<Vec<(EncodedSentence, LabelSet)>, ClassifierError> {
            set.iter()
                .map(|e| Ok((m.encode(&e.sentence, &e.context, None)?, e.labels)))
                .collect()
        };
    let neutral = encode_all(train_set, &model)?;
    let dev_inputs = dev.map(|d| encode_all(d, &model)).transpose()?;

    let mut adam = Adam {
        m: vec![0.0; model.params.len()],
        v: vec![0.0; model.params.len()],
        t: 0,
    };
    let mut grad = vec![0.0; model.params.len()];
    let salient_from = tc.epochs.div_ceil(2);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut since_best = 0;
    let mut last_loss = f64::NAN;

    for epoch in 1..=tc.epochs {
        let mut inputs: Vec<(EncodedSentence, LabelSet)> = neutral.clone();
        if mc.variant == Variant::Saliency && epoch > salient_from {
            for (x, gold) in &neutral {
                inputs.push((teacher_forced(&model, x, *gold)?, *gold));
            }
        }
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        for (batch, chunk) in order.chunks(tc.batch_size).enumerate() {
            grad.fill(0.0);
            for &i in chunk {
                let (x, gold) = &inputs[i];
                let fwd = model.layout.forward(&model.params, x, true);
                let (loss, dlogits) = bce_loss(&fwd.logits, *gold, &pos_weight);
                if !loss.is_finite() {
                    return Err(ClassifierError::NanLoss {
                        epoch,
                        batch,
                        example: i,
                        last_loss,
                    });
                }
                last_loss = loss;
                epoch_loss += loss;
                let cache = fwd.cache.expect("cache requested");
                model
                    .layout
                    .backward(&model.params, x, &cache, &dlogits, &mut grad);
            }
            let scale = 1.0 / chunk.len() as f64;
            let mut norm = 0.0;
            for g in grad.iter_mut() {
                *g *= scale;
                norm += *g * *g;
            }
            let norm = norm.sqrt();
            if !norm.is_finite() {
                return Err(ClassifierError::NanLoss {
                    epoch,
                    batch,
                    example: chunk[0],
                    last_loss,
                });
            }
            if norm > tc.clip_norm && tc.clip_norm > 0.0 {
                let f = tc.clip_norm / norm;
                grad.iter_mut().for_each(|g| *g *= f);
            }
            adam.step(&mut model.params, &grad, tc.learning_rate);
        }
        let loss = epoch_loss / inputs.len() as f64;

        let f1 = dev_inputs
            .as_deref()
            .map(|d| dev_f1(&model, d))
            .transpose()?;
        tracing::info!(epoch, loss, dev_micro_f1 = ?f1, "epoch done");
        model.history.push(EpochMetrics {
            epoch,
            loss,
            dev_micro_f1: f1,
        });
        if let Some(f1) = f1 {
            if best.as_ref().is_none_or(|(b, _)| f1 > *b) {
                best = Some((f1, model.params.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if tc.patience.is_some_and(|p| since_best >= p) {
                    tracing::info!(epoch, "early stop");
                    break;
                }
            }
        }
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    model.refresh_version();
    Ok(model)
}

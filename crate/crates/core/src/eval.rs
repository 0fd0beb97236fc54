//! Abstract-level train/test splitting and sentence-level precision/recall/F1.
//!
//! Scores count `(sentence, label)` pairs: a sentence with gold `{PUR}` predicted as
//! `{PUR, MTD}` contributes one true positive and one false positive. Percentages are exact
//! ratios of the pair counts, rounded half-up to two decimals only for display.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::classifier::{
    examples_from_corpus, train, ClassifierError, ModelConfig, TrainConfig, Variant,
};
use crate::corpus::{align_spans_to_sentences, AbstractId, AnnotatedAbstract, LabelSet, MoveLabel};
use crate::ingest::{segment_sentences, SegmenterConfig};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("split ratio {0} is outside (0, 1)")]
    BadRatio(f64),
    #[error("cannot split an empty corpus")]
    EmptyCorpus,
    #[error("abstract {0} has different text in gold and prediction")]
    TextMismatch(String),
    #[error("abstract {id}: {message}")]
    Align { id: String, message: String },
    #[error("gold and prediction ids differ; missing from prediction: [{}]; missing from gold: [{}]", .missing_in_pred.join(", "), .missing_in_gold.join(", "))]
    IdMismatch {
        missing_in_pred: Vec<String>,
        missing_in_gold: Vec<String>,
    },
}

/// A non-negative decimal with two fractional digits, stored as hundredths.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Fixed2(pub i64);

impl Fixed2 {
    /// `100 * num / den`, rounded half-up to two decimals; zero when `den` is zero.
    pub fn percent(num: u64, den: u64) -> Fixed2 {
        Fixed2::ratio(num * 100, den)
    }

    /// `num / den`, rounded half-up to two decimals; zero when `den` is zero.
    pub fn ratio(num: u64, den: u64) -> Fixed2 {
        if den == 0 {
            return Fixed2(0);
        }
        let num = num as u128 * 100;
        let den = den as u128;
        Fixed2(((2 * num + den) / (2 * den)) as i64)
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 100.0
    }
}

impl fmt::Display for Fixed2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = format!("{}.{:02}", self.0 / 100, self.0 % 100);
        f.pad(&s)
    }
}

impl<'de> Deserialize<'de> for Fixed2 {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(deserializer)?;
        Ok(Fixed2((v * 100.0).round() as i64))
    }
}

impl Serialize for Fixed2 {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.as_f64())
    }
}

/// A sentence addressed as abstract id plus sentence index.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SentenceKey {
    pub abstract_id: AbstractId,
    pub index: usize,
}

impl fmt::Display for SentenceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.abstract_id, self.index)
    }
}

pub type KeyedLabels = BTreeMap<SentenceKey, LabelSet>;

/// Segments every gold abstract and maps both annotations onto those sentences.
///
/// Abstracts present on one side only yield keys on that side, which the metric functions
/// then report as an id mismatch.
pub fn sentence_label_sets(
    gold: &[AnnotatedAbstract],
    pred: &[AnnotatedAbstract],
    segmenter: &SegmenterConfig,
) -> Result<(KeyedLabels, KeyedLabels), EvalError> {
    let pred_by_id: BTreeMap<&AbstractId, &AnnotatedAbstract> =
        pred.iter().map(|r| (r.id(), r)).collect();
    let gold_ids: BTreeSet<&AbstractId> = gold.iter().map(|r| r.id()).collect();
    let mut g_out = KeyedLabels::new();
    let mut p_out = KeyedLabels::new();
    let align = |r: &AnnotatedAbstract, sentences: &[crate::corpus::Sentence]| {
        align_spans_to_sentences(r, sentences).map_err(|e| EvalError::Align {
            id: r.id().to_string(),
            message: e.to_string(),
        })
    };
    for g in gold {
        let sentences = segment_sentences(g.text(), segmenter);
        let g_sets = align(g, &sentences)?;
        let key = |index| SentenceKey {
            abstract_id: g.id().clone(),
            index,
        };
        for (i, set) in g_sets.into_iter().enumerate() {
            g_out.insert(key(i), set);
        }
        if let Some(p) = pred_by_id.get(g.id()) {
            if p.text() != g.text() {
                return Err(EvalError::TextMismatch(g.id().to_string()));
            }
            for (i, set) in align(p, &sentences)?.into_iter().enumerate() {
                p_out.insert(key(i), set);
            }
        }
    }
    for p in pred.iter().filter(|p| !gold_ids.contains(p.id())) {
        let sentences = segment_sentences(p.text(), segmenter);
        for (i, set) in align(p, &sentences)?.into_iter().enumerate() {
            p_out.insert(
                SentenceKey {
                    abstract_id: p.id().clone(),
                    index: i,
                },
                set,
            );
        }
    }
    Ok((g_out, p_out))
}

/// Pooled pair counts with the derived scores (percent, unrounded).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Prf {
        let pct = |num: u64, den: u64| {
            if den == 0 {
                0.0
            } else {
                100.0 * num as f64 / den as f64
            }
        };
        Prf {
            tp,
            fp,
            fn_,
            precision: pct(tp, tp + fp),
            recall: pct(tp, tp + fn_),
            f1: pct(2 * tp, 2 * tp + fp + fn_),
        }
    }

    pub fn precision_2dp(&self) -> Fixed2 {
        Fixed2::percent(self.tp, self.tp + self.fp)
    }

    pub fn recall_2dp(&self) -> Fixed2 {
        Fixed2::percent(self.tp, self.tp + self.fn_)
    }

    pub fn f1_2dp(&self) -> Fixed2 {
        Fixed2::percent(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
}

impl fmt::Display for Prf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "P={} R={} F1={}",
            self.precision_2dp(),
            self.recall_2dp(),
            self.f1_2dp()
        )
    }
}

fn pair_counts(gold: &[LabelSet], pred: &[LabelSet]) -> (u64, u64, u64) {
    let mut tp = 0;
    let mut fp = 0;
    let mut fn_ = 0;
    for (g, p) in gold.iter().zip(pred) {
        let hit = g.intersection(*p).len() as u64;
        tp += hit;
        fp += p.len() as u64 - hit;
        fn_ += g.len() as u64 - hit;
    }
    (tp, fp, fn_)
}

/// Micro scores over position-aligned label sets.
///
/// # Panics
/// If the slices differ in length.
pub fn micro_prf_aligned(gold: &[LabelSet], pred: &[LabelSet]) -> Prf {
    assert_eq!(gold.len(), pred.len(), "gold and prediction lengths differ");
    let (tp, fp, fn_) = pair_counts(gold, pred);
    Prf::from_counts(tp, fp, fn_)
}

/// Micro scores over label sets keyed by sentence id; both maps must hold the same ids.
pub fn micro_prf<K: Ord + fmt::Display>(
    gold: &BTreeMap<K, LabelSet>,
    pred: &BTreeMap<K, LabelSet>,
) -> Result<Prf, EvalError> {
    let (g, p) = paired(gold, pred)?;
    Ok(micro_prf_aligned(&g, &p))
}

fn paired<K: Ord + fmt::Display>(
    gold: &BTreeMap<K, LabelSet>,
    pred: &BTreeMap<K, LabelSet>,
) -> Result<(Vec<LabelSet>, Vec<LabelSet>), EvalError> {
    let missing_in_pred: Vec<String> = gold
        .keys()
        .filter(|k| !pred.contains_key(k))
        .map(|k| k.to_string())
        .collect();
    let missing_in_gold: Vec<String> = pred
        .keys()
        .filter(|k| !gold.contains_key(k))
        .map(|k| k.to_string())
        .collect();
    if !missing_in_pred.is_empty() || !missing_in_gold.is_empty() {
        return Err(EvalError::IdMismatch {
            missing_in_pred,
            missing_in_gold,
        });
    }
    Ok((
        gold.values().copied().collect(),
        pred.values().copied().collect(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScore {
    pub label: MoveLabel,
    #[serde(flatten)]
    pub prf: Prf,
    pub support: u64,
    /// Set when the label never occurs in gold; scores are then reported as 0.
    pub no_support: bool,
}

/// One-vs-rest scores for every label, in canonical label order.
pub fn per_label_prf_aligned(gold: &[LabelSet], pred: &[LabelSet]) -> Vec<LabelScore> {
    assert_eq!(gold.len(), pred.len(), "gold and prediction lengths differ");
    MoveLabel::ALL
        .into_iter()
        .map(|label| {
            let (mut tp, mut fp, mut fn_) = (0, 0, 0);
            for (g, p) in gold.iter().zip(pred) {
                match (g.contains(label), p.contains(label)) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fn_ += 1,
                    (false, false) => {}
                }
            }
            let support = tp + fn_;
            let prf = if support == 0 {
                Prf {
                    tp,
                    fp,
                    fn_,
                    ..Prf::default()
                }
            } else {
                Prf::from_counts(tp, fp, fn_)
            };
            LabelScore {
                label,
                prf,
                support,
                no_support: support == 0,
            }
        })
        .collect()
}

pub fn per_label_prf<K: Ord + fmt::Display>(
    gold: &BTreeMap<K, LabelSet>,
    pred: &BTreeMap<K, LabelSet>,
) -> Result<Vec<LabelScore>, EvalError> {
    let (g, p) = paired(gold, pred)?;
    Ok(per_label_prf_aligned(&g, &p))
}

/// Counts over sentences whose gold and predicted sets are both singletons;
/// `counts[gold][pred]` in label index order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub counts: [[u64; 8]; 8],
    pub sentences: u64,
}

pub fn confusion_aligned(gold: &[LabelSet], pred: &[LabelSet]) -> Confusion {
    let mut c = Confusion::default();
    for (g, p) in gold.iter().zip(pred) {
        if let (Some(g), Some(p)) = (g.as_single(), p.as_single()) {
            c.counts[g.index()][p.index()] += 1;
            c.sentences += 1;
        }
    }
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub micro: Prf,
    pub per_label: Vec<LabelScore>,
    pub confusion: Confusion,
    pub n_sentences: usize,
    pub n_gold_pairs: u64,
    pub n_pred_pairs: u64,
}

impl EvalReport {
    pub fn from_aligned(gold: &[LabelSet], pred: &[LabelSet]) -> EvalReport {
        EvalReport {
            micro: micro_prf_aligned(gold, pred),
            per_label: per_label_prf_aligned(gold, pred),
            confusion: confusion_aligned(gold, pred),
            n_sentences: gold.len(),
            n_gold_pairs: gold.iter().map(|s| s.len() as u64).sum(),
            n_pred_pairs: pred.iter().map(|s| s.len() as u64).sum(),
        }
    }

    pub fn from_keyed<K: Ord + fmt::Display>(
        gold: &BTreeMap<K, LabelSet>,
        pred: &BTreeMap<K, LabelSet>,
    ) -> Result<EvalReport, EvalError> {
        let (g, p) = paired(gold, pred)?;
        Ok(EvalReport::from_aligned(&g, &p))
    }

    /// Aligned-column text rendering.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "sentences {}  gold pairs {}  predicted pairs {}\n\n",
            self.n_sentences, self.n_gold_pairs, self.n_pred_pairs
        ));
        out.push_str(&format!(
            "{:<8}{:>9}{:>9}{:>9}{:>9}\n",
            "Label", "P (%)", "R (%)", "F1 (%)", "Support"
        ));
        for s in &self.per_label {
            out.push_str(&format!(
                "{:<8}{:>9}{:>9}{:>9}{:>9}{}\n",
                s.label.code(),
                s.prf.precision_2dp(),
                s.prf.recall_2dp(),
                s.prf.f1_2dp(),
                s.support,
                if s.no_support { "  (no support)" } else { "" }
            ));
        }
        out.push_str(&format!(
            "{:<8}{:>9}{:>9}{:>9}{:>9}\n",
            "micro",
            self.micro.precision_2dp(),
            self.micro.recall_2dp(),
            self.micro.f1_2dp(),
            self.n_gold_pairs
        ));
        out
    }
}

/// Abstract-level split parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratio: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            ratio: 0.8,
            seed: 7,
        }
    }
}

/// Shuffles whole items (abstracts) with the seed and cuts at `round(ratio * n)`.
///
/// Each side keeps the original relative order, so reruns with the same seed are identical.
pub fn split<T: Clone>(items: &[T], spec: &SplitSpec) -> Result<(Vec<T>, Vec<T>), EvalError> {
    if !(spec.ratio > 0.0 && spec.ratio < 1.0) {
        return Err(EvalError::BadRatio(spec.ratio));
    }
    if items.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);
    let n_train = (spec.ratio * items.len() as f64).round() as usize;
    let train_idx: BTreeSet<usize> = order[..n_train].iter().copied().collect();
    let mut train = Vec::with_capacity(n_train);
    let mut test = Vec::with_capacity(items.len() - n_train);
    for (i, item) in items.iter().enumerate() {
        if train_idx.contains(&i) {
            train.push(item.clone());
        } else {
            test.push(item.clone());
        }
    }
    Ok((train, test))
}

/// One row of a variant comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    pub variant: Variant,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub micro: Option<Prf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_version: Option<String>,
}

/// Plain / context / saliency scored on one shared split with shared seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantComparison {
    pub split: SplitSpec,
    pub train_abstracts: usize,
    pub test_abstracts: usize,
    pub train_sentences: usize,
    pub test_sentences: usize,
    pub train_config: TrainConfig,
    pub model_config: ModelConfig,
    pub rows: Vec<VariantRow>,
    /// Set when a variant failed; later variants were not run.
    pub aborted: bool,
}

impl VariantComparison {
    pub fn f1(&self, variant: Variant) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.variant == variant)
            .and_then(|r| r.micro.map(|m| m.f1))
    }

    pub fn render_text(&self) -> String {
        let mut out = format!(
            "split seed {} ratio {}: train {} abstracts / {} sentences, test {} abstracts / {} sentences\n",
            self.split.seed,
            self.split.ratio,
            self.train_abstracts,
            self.train_sentences,
            self.test_abstracts,
            self.test_sentences
        );
        out.push_str(&format!(
            "training seed {}, {} epochs\n\n",
            self.train_config.seed, self.train_config.epochs
        ));
        out.push_str(&format!(
            "{:<10}{:>9}{:>9}{:>9}\n",
            "Model", "P (%)", "R (%)", "F1 (%)"
        ));
        for row in &self.rows {
            match (&row.micro, &row.error) {
                (Some(m), _) => out.push_str(&format!(
                    "{:<10}{:>9}{:>9}{:>9}\n",
                    row.variant.name(),
                    m.precision_2dp(),
                    m.recall_2dp(),
                    m.f1_2dp()
                )),
                (None, Some(e)) => {
                    out.push_str(&format!("{:<10}  failed: {e}\n", row.variant.name()))
                }
                (None, None) => {}
            }
        }
        if self.aborted {
            out.push_str("(comparison aborted; results are partial)\n");
        }
        out
    }
}

/// Splits `corpus` by abstract, then trains and tests each variant with the same seeds.
///
/// `base` supplies the encoder and decision settings; its variant field is overridden per
/// row. A variant that fails to train stops the comparison and the report is marked partial.
pub fn compare_variants(
    corpus: &[AnnotatedAbstract],
    variants: &[Variant],
    spec: &SplitSpec,
    tc: &TrainConfig,
    base: &ModelConfig,
    segmenter: &SegmenterConfig,
) -> Result<VariantComparison, ClassifierError> {
    let (train_docs, test_docs) =
        split(corpus, spec).map_err(|e| ClassifierError::Input(e.to_string()))?;
    let k = base.context_window;
    let (train_set, _) = examples_from_corpus(&train_docs, segmenter, k)?;
    let (test_set, _) = examples_from_corpus(&test_docs, segmenter, k)?;
    let gold: Vec<LabelSet> = test_set.iter().map(|e| e.labels).collect();
    let mut report = VariantComparison {
        split: *spec,
        train_abstracts: train_docs.len(),
        test_abstracts: test_docs.len(),
        train_sentences: train_set.len(),
        test_sentences: test_set.len(),
        train_config: tc.clone(),
        model_config: base.clone(),
        rows: Vec::new(),
        aborted: false,
    };
    for &variant in variants {
        let mut mc = base.clone();
        mc.variant = variant;
        mc.sentence_position_feature = variant != Variant::Plain;
        let outcome = train(&train_set, None, tc, &mc).and_then(|model| {
            let pred = test_set
                .iter()
                .map(|e| model.predict(&e.sentence, &e.context).map(|p| p.labels))
                .collect::<Result<Vec<_>, _>>()?;
            Ok((micro_prf_aligned(&gold, &pred), model.version))
        });
        match outcome {
            Ok((micro, version)) => report.rows.push(VariantRow {
                variant,
                micro: Some(micro),
                error: None,
                model_version: Some(version),
            }),
            Err(e) => {
                tracing::error!(%variant, error = %e, "variant failed; aborting comparison");
                report.rows.push(VariantRow {
                    variant,
                    micro: None,
                    error: Some(e.to_string()),
                    model_version: None,
                });
                report.aborted = true;
                break;
            }
        }
    }
    Ok(report)
}

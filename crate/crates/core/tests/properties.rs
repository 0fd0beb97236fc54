//! Randomized properties of the corpus format, segmentation, statistics and metrics.

use std::collections::{BTreeMap, BTreeSet};

use movekit::corpus::{
    parse_doccano_record, serialize_doccano, validate, Abstract, AbstractMeta, Annotation,
    Discipline, LabelSet, Provenance,
};
use movekit::eval::{micro_prf, per_label_prf, Fixed2};
use movekit::ingest::{segment_sentences, SegmenterConfig};
use movekit::stats::label_frequency;
use movekit::{AnnotatedAbstract, MoveLabel, Span};
use proptest::prelude::*;

fn label() -> impl Strategy<Value = MoveLabel> {
    (0usize..8).prop_map(|i| MoveLabel::from_index(i).unwrap())
}

/// A valid record: text with non-ASCII characters, sorted non-overlapping spans, and
/// consistent provenance.
fn record() -> impl Strategy<Value = AnnotatedAbstract> {
    (
        any::<i64>(),
        "[A-Za-zéüß中 .,;\"\\\\/\n\t-]{1,80}",
        proptest::collection::vec((0usize..100, 1usize..30, label(), 0u8..3), 0..6),
        proptest::option::of(0usize..4),
    )
        .prop_filter_map("non-blank text", |(id, text, raw, disc)| {
            if text.trim().is_empty() {
                return None;
            }
            let n = text.chars().count();
            let mut spans: Vec<(Span, Provenance)> = Vec::new();
            let mut cursor = 0;
            let mut starts: Vec<_> = raw.into_iter().collect();
            starts.sort_by_key(|r| r.0);
            for (gap, len, l, p) in starts {
                let start = cursor + gap % 7;
                let end = (start + len).min(n);
                if start >= end {
                    break;
                }
                let prov =
                    [Provenance::Manual, Provenance::Auto, Provenance::Corrected][p as usize];
                spans.push((Span::new(start, end, l), prov));
                cursor = end;
            }
            let meta = AbstractMeta {
                discipline: disc.map(|d| {
                    [
                        Discipline::Nlp,
                        Discipline::Cv,
                        Discipline::Me,
                        Discipline::Ce,
                    ][d]
                }),
                ..Default::default()
            };
            let doc = Abstract::new(id, text).ok()?.with_meta(meta);
            let has_auto = spans.iter().any(|(_, p)| *p == Provenance::Auto);
            let annotation = Annotation {
                spans: spans.iter().map(|(s, _)| *s).collect(),
                provenance: spans.iter().map(|(_, p)| *p).collect(),
                model_version: has_auto.then(|| "plain-0000".to_string()),
            };
            Some(AnnotatedAbstract::new(doc, annotation))
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn doccano_round_trip_is_lossless(aa in record()) {
        prop_assert!(validate(&aa).is_empty(), "{:?}", validate(&aa));
        let line = serialize_doccano(&aa);
        let back = parse_doccano_record(&line).unwrap();
        prop_assert_eq!(&back, &aa);
        prop_assert_eq!(serialize_doccano(&back), line);
    }

    #[test]
    fn frequency_counts_every_span(records in proptest::collection::vec(record(), 0..8)) {
        let f = label_frequency(&records);
        let spans: usize = records.iter().map(|r| r.spans().len()).sum();
        prop_assert_eq!(f.total as usize, spans);
        prop_assert_eq!(f.rows.iter().map(|r| r.count).sum::<u64>(), f.total);
        if f.total > 0 {
            // Each percent is rounded to 0.005 at most, so the sum stays near 100.
            let sum: i64 = f.rows.iter().map(|r| r.percent.0).sum();
            prop_assert!((sum - 10_000).abs() <= 4, "{}", sum);
        }
    }

    #[test]
    fn sentences_cover_the_text_with_whitespace_gaps(aa in record()) {
        let sents = segment_sentences(aa.text(), &SegmenterConfig::default());
        let chars: Vec<char> = aa.text().chars().collect();
        let mut cursor = 0;
        for s in &sents {
            prop_assert!(chars[cursor..s.start].iter().all(|c| c.is_whitespace()));
            prop_assert_eq!(chars[s.start..s.end].iter().collect::<String>(), s.text.clone());
            cursor = s.end;
        }
        prop_assert!(chars[cursor..].iter().all(|c| c.is_whitespace()));
    }
}

/// Brute-force micro scores over explicit `(sentence, label)` pair sets.
fn oracle(gold: &BTreeMap<u32, LabelSet>, pred: &BTreeMap<u32, LabelSet>) -> (f64, f64, f64, i64) {
    let pairs = |m: &BTreeMap<u32, LabelSet>| -> BTreeSet<(u32, usize)> {
        m.iter()
            .flat_map(|(k, set)| {
                (0..8)
                    .filter(|i| set.contains(MoveLabel::from_index(*i).unwrap()))
                    .map(move |i| (*k, i))
            })
            .collect()
    };
    let g = pairs(gold);
    let p = pairs(pred);
    let tp = g.intersection(&p).count() as f64;
    let precision = if p.is_empty() {
        0.0
    } else {
        100.0 * tp / p.len() as f64
    };
    let recall = if g.is_empty() {
        0.0
    } else {
        100.0 * tp / g.len() as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    // F1 in hundredths of a percent, rounded half-up with integer arithmetic.
    let d = (g.len() + p.len()) as i64;
    let hundredths = if d == 0 {
        0
    } else {
        let n = 20_000 * tp as i64;
        n / d + i64::from(2 * (n % d) >= d)
    };
    (precision, recall, f1, hundredths)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn micro_scores_match_pair_set_oracle(
        sets in proptest::collection::vec((0u8..=255, 0u8..=255, any::<bool>()), 1..60)
    ) {
        let mut gold = BTreeMap::new();
        let mut pred = BTreeMap::new();
        for (k, (g, p, keep_single)) in sets.into_iter().enumerate() {
            // Mostly singleton sets, as in real data, with some multi-label ones.
            let narrow = |b: u8| if keep_single { LabelSet::from_bits(1 << (b % 8)) } else { LabelSet::from_bits(b) };
            gold.insert(k as u32, narrow(g));
            pred.insert(k as u32, narrow(p));
        }
        let prf = micro_prf(&gold, &pred).unwrap();
        let (p, r, f, f_hundredths) = oracle(&gold, &pred);
        prop_assert!((prf.precision - p).abs() < 1e-9);
        prop_assert!((prf.recall - r).abs() < 1e-9);
        prop_assert!((prf.f1 - f).abs() < 1e-9);
        prop_assert_eq!(prf.f1_2dp().0, f_hundredths);

        let per = per_label_prf(&gold, &pred).unwrap();
        let gold_pairs: usize = gold.values().map(|s| s.len()).sum();
        prop_assert_eq!(per.iter().map(|s| s.support).sum::<u64>(), gold_pairs as u64);
        prop_assert_eq!(per.iter().map(|s| s.prf.tp).sum::<u64>(), prf.tp);
    }
}

#[test]
fn fixed2_half_up_on_exact_ties() {
    // 1/8 = 0.125 exactly: half-up gives 0.13 where binary rounding might give 0.12.
    assert_eq!(Fixed2::ratio(1, 8).to_string(), "0.13");
    assert_eq!(Fixed2::percent(1, 3).to_string(), "33.33");
    assert_eq!(Fixed2::percent(2, 3).to_string(), "66.67");
}

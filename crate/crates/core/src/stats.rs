//! Corpus statistics: move frequency, per-partition move occurrence, and per-abstract
//! averages of sentences, words and distinct move types.
//!
//! Percentages and averages are exact ratios rounded half-up to two decimals.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedAbstract, MoveLabel};
use crate::eval::Fixed2;
use crate::ingest::{segment_sentences, SegmenterConfig};

/// Partition name for abstracts without the metadata a partition needs.
pub const UNKNOWN_PARTITION: &str = "unknown";
/// The single partition used when no partitioning is requested.
pub const ALL_PARTITION: &str = "all";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Field,
    Discipline,
    None,
}

impl FromStr for Partition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "field" => Ok(Partition::Field),
            "discipline" => Ok(Partition::Discipline),
            "none" => Ok(Partition::None),
            other => Err(format!(
                "unknown partition {other:?} (expected field, discipline or none)"
            )),
        }
    }
}

impl Partition {
    pub fn key(self, aa: &AnnotatedAbstract) -> String {
        let discipline = aa.doc.meta.discipline;
        match self {
            Partition::None => ALL_PARTITION.to_string(),
            Partition::Field => discipline
                .map(|d| d.field().to_string())
                .unwrap_or_else(|| UNKNOWN_PARTITION.to_string()),
            Partition::Discipline => discipline
                .map(|d| d.code().to_string())
                .unwrap_or_else(|| UNKNOWN_PARTITION.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRow {
    pub label: MoveLabel,
    pub count: u64,
    pub percent: Fixed2,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub total: u64,
    /// Set when there are no spans at all; every percent is then 0.
    pub empty: bool,
    pub rows: Vec<CountRow>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccurrenceTable {
    pub abstracts: u64,
    /// Abstracts containing at least one span of the label.
    pub rows: Vec<CountRow>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Aggregates {
    pub abstracts: u64,
    pub sentences: u64,
    pub avg_sentences: Fixed2,
    pub words: u64,
    pub avg_words: Fixed2,
    pub move_types: u64,
    pub avg_move_types: Fixed2,
    pub spans: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub partition: Partition,
    pub frequency: FrequencyTable,
    pub occurrence: BTreeMap<String, OccurrenceTable>,
    pub aggregates: BTreeMap<String, Aggregates>,
}

fn count_rows(counts: &[u64; 8], total: u64) -> Vec<CountRow> {
    MoveLabel::ALL
        .into_iter()
        .map(|label| CountRow {
            label,
            count: counts[label.index()],
            percent: Fixed2::percent(counts[label.index()], total),
        })
        .collect()
}

/// Every span is one move instance.
pub fn label_frequency<'a>(
    corpus: impl IntoIterator<Item = &'a AnnotatedAbstract>,
) -> FrequencyTable {
    let mut counts = [0u64; 8];
    for aa in corpus {
        for s in aa.spans() {
            counts[s.label.index()] += 1;
        }
    }
    let total = counts.iter().sum();
    FrequencyTable {
        total,
        empty: total == 0,
        rows: count_rows(&counts, total),
    }
}

/// An abstract counts once for every label it has at least one span of.
pub fn label_occurrence(
    corpus: &[AnnotatedAbstract],
    partition: Partition,
) -> BTreeMap<String, OccurrenceTable> {
    let mut acc: BTreeMap<String, (u64, [u64; 8])> = BTreeMap::new();
    for aa in corpus {
        let entry = acc.entry(partition.key(aa)).or_insert((0, [0; 8]));
        entry.0 += 1;
        let labels: BTreeSet<MoveLabel> = aa.spans().iter().map(|s| s.label).collect();
        for l in labels {
            entry.1[l.index()] += 1;
        }
    }
    acc.into_iter()
        .map(|(k, (n, counts))| {
            (
                k,
                OccurrenceTable {
                    abstracts: n,
                    rows: count_rows(&counts, n),
                },
            )
        })
        .collect()
}

/// Whitespace-delimited tokens, punctuation attached.
pub fn word_count(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

pub fn abstract_aggregates(
    corpus: &[AnnotatedAbstract],
    partition: Partition,
    segmenter: &SegmenterConfig,
) -> BTreeMap<String, Aggregates> {
    let mut acc: BTreeMap<String, Aggregates> = BTreeMap::new();
    for aa in corpus {
        let e = acc.entry(partition.key(aa)).or_insert(Aggregates {
            abstracts: 0,
            sentences: 0,
            avg_sentences: Fixed2(0),
            words: 0,
            avg_words: Fixed2(0),
            move_types: 0,
            avg_move_types: Fixed2(0),
            spans: 0,
        });
        e.abstracts += 1;
        e.sentences += segment_sentences(aa.text(), segmenter).len() as u64;
        e.words += word_count(aa.text());
        e.move_types += aa
            .spans()
            .iter()
            .map(|s| s.label)
            .collect::<BTreeSet<_>>()
            .len() as u64;
        e.spans += aa.spans().len() as u64;
    }
    for a in acc.values_mut() {
        a.avg_sentences = Fixed2::ratio(a.sentences, a.abstracts);
        a.avg_words = Fixed2::ratio(a.words, a.abstracts);
        a.avg_move_types = Fixed2::ratio(a.move_types, a.abstracts);
    }
    acc
}

pub fn corpus_stats(
    corpus: &[AnnotatedAbstract],
    partition: Partition,
    segmenter: &SegmenterConfig,
) -> CorpusStats {
    CorpusStats {
        partition,
        frequency: label_frequency(corpus),
        occurrence: label_occurrence(corpus, partition),
        aggregates: abstract_aggregates(corpus, partition, segmenter),
    }
}

impl CorpusStats {
    /// Three aligned-column tables.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let f = &self.frequency;
        let _ = writeln!(out, "Move frequency ({} move instances)", f.total);
        if f.empty {
            let _ = writeln!(out, "(empty: no annotated spans)");
        }
        let _ = writeln!(out, "{:<8}{:>10}{:>10}", "Move", "Count", "Percent");
        for r in &f.rows {
            let _ = writeln!(out, "{:<8}{:>10}{:>10}", r.label.code(), r.count, r.percent);
        }
        let _ = writeln!(out, "{:<8}{:>10}", "Total", f.total);

        let _ = writeln!(
            out,
            "\nMove occurrence by {}",
            partition_name(self.partition)
        );
        let mut header = format!("{:<8}", "Move");
        for (name, t) in &self.occurrence {
            header.push_str(&format!("{:>24}", format!("{name} (n={})", t.abstracts)));
        }
        let _ = writeln!(out, "{header}");
        for l in MoveLabel::ALL {
            let mut line = format!("{:<8}", l.code());
            for t in self.occurrence.values() {
                let r = &t.rows[l.index()];
                line.push_str(&format!("{:>24}", format!("{} ({}%)", r.count, r.percent)));
            }
            let _ = writeln!(out, "{line}");
        }

        let _ = writeln!(
            out,
            "\nPer-abstract averages by {}",
            partition_name(self.partition)
        );
        let _ = writeln!(
            out,
            "{:<14}{:>10}{:>11}{:>10}{:>11}{:>10}{:>12}",
            "Partition", "Abstracts", "Sentences", "Avg", "Words", "Avg", "Avg moves"
        );
        for (name, a) in &self.aggregates {
            let _ = writeln!(
                out,
                "{:<14}{:>10}{:>11}{:>10}{:>11}{:>10}{:>12}",
                name,
                a.abstracts,
                a.sentences,
                a.avg_sentences,
                a.words,
                a.avg_words,
                a.avg_move_types
            );
        }
        out
    }
}

fn partition_name(p: Partition) -> &'static str {
    match p {
        Partition::Field => "field",
        Partition::Discipline => "discipline",
        Partition::None => "corpus",
    }
}

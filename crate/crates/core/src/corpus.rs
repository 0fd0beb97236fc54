//! Canonical data model for abstracts, move labels and span annotations.
//!
//! Records interchange as doccano-style JSON lines:
//!
//! ```text
//! {"id": 20, "data": "Words can have multiple senses. ...", "label": [[0, 31, "BAC"], [32, 265, "GAP"]]}
//! ```
//!
//! Offsets are Unicode code-point offsets into `data`, end-exclusive. Optional trailing keys
//! (`meta`, `provenance`, `model_version`) are emitted only when they carry information, so a
//! manually annotated gold record serializes to exactly the three doccano keys.

use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::str::FromStr;

use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::ser::{SerializeTuple, Serializer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One of the eight rhetorical move types of an abstract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MoveLabel {
    Background,
    Gap,
    Purpose,
    Method,
    Result,
    Conclusion,
    Implication,
    Contribution,
}

impl MoveLabel {
    pub const ALL: [MoveLabel; 8] = [
        MoveLabel::Background,
        MoveLabel::Gap,
        MoveLabel::Purpose,
        MoveLabel::Method,
        MoveLabel::Result,
        MoveLabel::Conclusion,
        MoveLabel::Implication,
        MoveLabel::Contribution,
    ];

    pub const COUNT: usize = 8;

    pub fn code(self) -> &'static str {
        match self {
            MoveLabel::Background => "BAC",
            MoveLabel::Gap => "GAP",
            MoveLabel::Purpose => "PUR",
            MoveLabel::Method => "MTD",
            MoveLabel::Result => "RST",
            MoveLabel::Conclusion => "CLN",
            MoveLabel::Implication => "IMP",
            MoveLabel::Contribution => "CTN",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MoveLabel::Background => "Background",
            MoveLabel::Gap => "Gap",
            MoveLabel::Purpose => "Purpose",
            MoveLabel::Method => "Method",
            MoveLabel::Result => "Result",
            MoveLabel::Conclusion => "Conclusion",
            MoveLabel::Implication => "Implication",
            MoveLabel::Contribution => "Contribution",
        }
    }

    /// Short functional description used in reports and the review UI.
    pub fn definition(self) -> &'static str {
        match self {
            MoveLabel::Background => {
                "Introduces the research field and the historical, theoretical or empirical context."
            }
            MoveLabel::Gap => {
                "Shows what earlier work leaves open or gets wrong, motivating the study."
            }
            MoveLabel::Purpose => "States the aim, thesis or hypothesis of the paper.",
            MoveLabel::Method => "Describes the design, procedure, approach, data or assumptions.",
            MoveLabel::Result => "Reports the main findings or what was achieved.",
            MoveLabel::Conclusion => {
                "Sums up the results or carries them beyond the scope of the paper."
            }
            MoveLabel::Implication => "Draws an inference that the abstract does not spell out.",
            MoveLabel::Contribution => "Names the theoretical or practical value of the work.",
        }
    }

    /// Position in [`MoveLabel::ALL`]; also the classifier head index.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<MoveLabel> {
        Self::ALL.get(index).copied()
    }
}

impl fmt::Display for MoveLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown label code {0:?}")]
pub struct UnknownLabel(pub String);

impl FromStr for MoveLabel {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MoveLabel::ALL
            .into_iter()
            .find(|l| l.code() == s)
            .ok_or_else(|| UnknownLabel(s.to_string()))
    }
}

impl Serialize for MoveLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.code())
    }
}

impl<'de> Deserialize<'de> for MoveLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let code = String::deserialize(deserializer)?;
        code.parse().map_err(de::Error::custom)
    }
}

/// A set of move labels, stored as a bitmask over [`MoveLabel::ALL`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LabelSet(u8);

impl LabelSet {
    pub fn empty() -> Self {
        LabelSet(0)
    }

    pub fn single(label: MoveLabel) -> Self {
        LabelSet(1 << label.index())
    }

    pub fn insert(&mut self, label: MoveLabel) {
        self.0 |= 1 << label.index();
    }

    pub fn remove(&mut self, label: MoveLabel) {
        self.0 &= !(1 << label.index());
    }

    pub fn contains(self, label: MoveLabel) -> bool {
        self.0 & (1 << label.index()) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn intersection(self, other: LabelSet) -> LabelSet {
        LabelSet(self.0 & other.0)
    }

    pub fn union(self, other: LabelSet) -> LabelSet {
        LabelSet(self.0 | other.0)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn from_bits(bits: u8) -> Self {
        LabelSet(bits)
    }

    /// Labels in canonical order.
    pub fn iter(self) -> impl Iterator<Item = MoveLabel> {
        MoveLabel::ALL
            .into_iter()
            .filter(move |l| self.contains(*l))
    }

    /// The only label of a singleton set.
    pub fn as_single(self) -> Option<MoveLabel> {
        if self.len() == 1 {
            self.iter().next()
        } else {
            None
        }
    }
}

impl FromIterator<MoveLabel> for LabelSet {
    fn from_iter<I: IntoIterator<Item = MoveLabel>>(iter: I) -> Self {
        let mut set = LabelSet::empty();
        for label in iter {
            set.insert(label);
        }
        set
    }
}

impl fmt::Display for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, label) in self.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            f.write_str(label.code())?;
        }
        f.write_str("}")
    }
}

impl Serialize for LabelSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for LabelSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let labels = Vec::<MoveLabel>::deserialize(deserializer)?;
        Ok(labels.into_iter().collect())
    }
}

/// Record identifier: doccano uses integers, other sources may use opaque strings.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AbstractId {
    Int(i64),
    Text(String),
}

impl fmt::Display for AbstractId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AbstractId::Int(n) => write!(f, "{n}"),
            AbstractId::Text(s) => f.write_str(s),
        }
    }
}

impl FromStr for AbstractId {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.parse::<i64>() {
            Ok(n) => AbstractId::Int(n),
            Err(_) => AbstractId::Text(s.to_string()),
        })
    }
}

impl From<i64> for AbstractId {
    fn from(n: i64) -> Self {
        AbstractId::Int(n)
    }
}

/// Sub-discipline of an abstract's source venue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Discipline {
    #[serde(rename = "NLP")]
    Nlp,
    #[serde(rename = "CV")]
    Cv,
    #[serde(rename = "ME")]
    Me,
    #[serde(rename = "CE")]
    Ce,
}

impl Discipline {
    pub fn code(self) -> &'static str {
        match self {
            Discipline::Nlp => "NLP",
            Discipline::Cv => "CV",
            Discipline::Me => "ME",
            Discipline::Ce => "CE",
        }
    }

    pub fn field(self) -> Field {
        match self {
            Discipline::Nlp | Discipline::Cv => Field::Ai,
            Discipline::Me | Discipline::Ce => Field::Engineering,
        }
    }
}

impl FromStr for Discipline {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "NLP" => Ok(Discipline::Nlp),
            "CV" => Ok(Discipline::Cv),
            "ME" => Ok(Discipline::Me),
            "CE" => Ok(Discipline::Ce),
            _ => Err(format!(
                "unknown discipline {s:?} (expected NLP, CV, ME or CE)"
            )),
        }
    }
}

impl fmt::Display for Discipline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Disciplines grouped into the two broad fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Field {
    #[serde(rename = "AI")]
    Ai,
    Engineering,
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Field::Ai => "AI",
            Field::Engineering => "Engineering",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbstractMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub venue: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discipline: Option<Discipline>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub year: Option<i32>,
}

impl AbstractMeta {
    pub fn is_empty(&self) -> bool {
        self.title.is_none()
            && self.venue.is_none()
            && self.discipline.is_none()
            && self.year.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Abstract {
    pub id: AbstractId,
    pub text: String,
    #[serde(default, skip_serializing_if = "AbstractMeta::is_empty")]
    pub meta: AbstractMeta,
}

impl Abstract {
    pub fn new(id: impl Into<AbstractId>, text: impl Into<String>) -> Result<Self, CorpusError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(CorpusError::EmptyText);
        }
        Ok(Abstract {
            id: id.into(),
            text,
            meta: AbstractMeta::default(),
        })
    }

    pub fn with_meta(mut self, meta: AbstractMeta) -> Self {
        self.meta = meta;
        self
    }

    /// Length in code points, the unit of every span offset.
    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

/// A labelled character range `[start, end)` of an abstract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub label: MoveLabel,
}

impl Span {
    pub fn new(start: usize, end: usize, label: MoveLabel) -> Self {
        Span { start, end, label }
    }

    pub fn overlaps(&self, start: usize, end: usize) -> bool {
        self.start < end && start < self.end
    }

    pub fn same_extent(&self, other: &Span) -> bool {
        self.start == other.start && self.end == other.end
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, \"{}\"]", self.start, self.end, self.label)
    }
}

impl Serialize for Span {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut t = serializer.serialize_tuple(3)?;
        t.serialize_element(&self.start)?;
        t.serialize_element(&self.end)?;
        t.serialize_element(self.label.code())?;
        t.end()
    }
}

impl<'de> Deserialize<'de> for Span {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let RawTriple(start, end, code) = RawTriple::deserialize(deserializer)?;
        if start < 0 || end < 0 {
            return Err(de::Error::custom(format!(
                "span [{start}, {end}, {code:?}]: negative offset"
            )));
        }
        let label = code.parse::<MoveLabel>().map_err(de::Error::custom)?;
        Ok(Span::new(start as usize, end as usize, label))
    }
}

/// A `[start, end, "CODE"]` triple as it appears on the wire, before validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTriple(pub i64, pub i64, pub String);

impl fmt::Display for RawTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {:?}]", self.0, self.1, self.2)
    }
}

impl<'de> Deserialize<'de> for RawTriple {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct TripleVisitor;

        impl<'de> Visitor<'de> for TripleVisitor {
            type Value = RawTriple;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a [start, end, \"CODE\"] triple")
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<RawTriple, A::Error> {
                let start = seq
                    .next_element::<i64>()?
                    .ok_or_else(|| de::Error::invalid_length(0, &self))?;
                let end = seq
                    .next_element::<i64>()?
                    .ok_or_else(|| de::Error::invalid_length(1, &self))?;
                let code = seq
                    .next_element::<String>()?
                    .ok_or_else(|| de::Error::invalid_length(2, &self))?;
                if seq.next_element::<de::IgnoredAny>()?.is_some() {
                    return Err(de::Error::invalid_length(4, &self));
                }
                Ok(RawTriple(start, end, code))
            }
        }

        deserializer.deserialize_seq(TripleVisitor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Manual,
    Auto,
    Corrected,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub spans: Vec<Span>,
    /// Parallel to `spans`.
    pub provenance: Vec<Provenance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_version: Option<String>,
}

impl Annotation {
    pub fn manual(spans: Vec<Span>) -> Self {
        let provenance = vec![Provenance::Manual; spans.len()];
        Annotation {
            spans,
            provenance,
            model_version: None,
        }
    }

    pub fn auto(spans: Vec<Span>, model_version: impl Into<String>) -> Self {
        let provenance = vec![Provenance::Auto; spans.len()];
        Annotation {
            spans,
            provenance,
            model_version: Some(model_version.into()),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    pub fn has_auto(&self) -> bool {
        self.provenance.contains(&Provenance::Auto)
    }

    /// Status implied by the spans and their provenance.
    pub fn derived_status(&self) -> Status {
        if self.spans.is_empty() {
            Status::Unlabeled
        } else if self.has_auto() {
            Status::Auto
        } else {
            Status::Reviewed
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Unlabeled,
    Auto,
    Reviewed,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Unlabeled => "unlabeled",
            Status::Auto => "auto",
            Status::Reviewed => "reviewed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedAbstract {
    pub doc: Abstract,
    pub annotation: Annotation,
    pub status: Status,
}

impl AnnotatedAbstract {
    pub fn unlabeled(doc: Abstract) -> Self {
        AnnotatedAbstract {
            doc,
            annotation: Annotation::default(),
            status: Status::Unlabeled,
        }
    }

    /// Builds a record whose status is derived from the annotation.
    pub fn new(doc: Abstract, annotation: Annotation) -> Self {
        let status = annotation.derived_status();
        AnnotatedAbstract {
            doc,
            annotation,
            status,
        }
    }

    pub fn id(&self) -> &AbstractId {
        &self.doc.id
    }

    pub fn text(&self) -> &str {
        &self.doc.text
    }

    pub fn spans(&self) -> &[Span] {
        &self.annotation.spans
    }
}

/// A sentence of an abstract, addressed by code-point offsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub text: String,
    pub start: usize,
    pub end: usize,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    EmptyText,
    InvertedSpan,
    OutOfBounds,
    Overlap,
    Unsorted,
    ProvenanceLength,
    ModelVersionOnManual,
    UnlabeledWithSpans,
    LabeledWithoutSpans,
    AutoInReviewed,
}

/// A broken invariant, located at a span index where applicable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: Rule,
    pub span: Option<usize>,
}

impl Violation {
    fn at(rule: Rule, span: usize) -> Self {
        Violation {
            rule,
            span: Some(span),
        }
    }

    fn global(rule: Rule) -> Self {
        Violation { rule, span: None }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match self.rule {
            Rule::EmptyText => "text is empty",
            Rule::InvertedSpan => "start ≥ end",
            Rule::OutOfBounds => "end out of bounds",
            Rule::Overlap => "overlap",
            Rule::Unsorted => "spans not sorted by start",
            Rule::ProvenanceLength => "provenance length differs from span count",
            Rule::ModelVersionOnManual => "model_version set on a fully manual annotation",
            Rule::UnlabeledWithSpans => "status unlabeled but spans present",
            Rule::LabeledWithoutSpans => "status labeled but no spans",
            Rule::AutoInReviewed => "auto span in reviewed record",
        };
        match self.span {
            Some(i) => write!(f, "{what} at span {i}"),
            None => f.write_str(what),
        }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed record at line {line}, column {column}: {message}")]
    Malformed {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("record {id}: span {triple}: {reason}")]
    InvalidSpan {
        id: AbstractId,
        triple: String,
        reason: String,
    },
    #[error("record {id}: {}", join_violations(.violations))]
    Invalid {
        id: AbstractId,
        violations: Vec<Violation>,
    },
    #[error("abstract text is empty")]
    EmptyText,
    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<CorpusError>,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("span {index} {span} overlaps no sentence")]
    Orphan { index: usize, span: Span },
}

/// Wire shape of a record, accepted leniently and validated afterwards.
#[derive(Deserialize)]
struct RecordIn {
    id: AbstractId,
    #[serde(alias = "text")]
    data: String,
    #[serde(default)]
    label: Vec<RawTriple>,
    #[serde(default)]
    meta: Option<AbstractMeta>,
    #[serde(default)]
    provenance: Option<Vec<Provenance>>,
    #[serde(default)]
    model_version: Option<String>,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    id: &'a AbstractId,
    data: &'a str,
    label: &'a [Span],
    #[serde(skip_serializing_if = "Option::is_none")]
    meta: Option<&'a AbstractMeta>,
    #[serde(skip_serializing_if = "Option::is_none")]
    provenance: Option<&'a [Provenance]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    model_version: Option<&'a str>,
}

/// Parses one doccano JSON object into a validated record.
pub fn parse_doccano_record(record_text: &str) -> Result<AnnotatedAbstract, CorpusError> {
    let raw: RecordIn = serde_json::from_str(record_text).map_err(|e| CorpusError::Malformed {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let char_len = raw.data.chars().count();
    if raw.data.trim().is_empty() {
        return Err(CorpusError::EmptyText);
    }

    let mut entries = Vec::with_capacity(raw.label.len());
    for (i, triple) in raw.label.iter().enumerate() {
        let invalid = |reason: &str| CorpusError::InvalidSpan {
            id: raw.id.clone(),
            triple: triple.to_string(),
            reason: reason.to_string(),
        };
        let RawTriple(start, end, code) = triple;
        let label = code
            .parse::<MoveLabel>()
            .map_err(|_| invalid("unknown label code"))?;
        if *start < 0 || *end < 0 {
            return Err(invalid("negative offset"));
        }
        if start >= end {
            return Err(invalid("start ≥ end"));
        }
        if *end as usize > char_len {
            return Err(invalid(&format!(
                "end out of bounds (text has {char_len} characters)"
            )));
        }
        let provenance = match &raw.provenance {
            Some(p) => *p.get(i).ok_or_else(|| CorpusError::Invalid {
                id: raw.id.clone(),
                violations: vec![Violation::global(Rule::ProvenanceLength)],
            })?,
            None => Provenance::Manual,
        };
        entries.push((
            Span::new(*start as usize, *end as usize, label),
            provenance,
            triple,
        ));
    }
    if let Some(p) = &raw.provenance {
        if p.len() != raw.label.len() {
            return Err(CorpusError::Invalid {
                id: raw.id.clone(),
                violations: vec![Violation::global(Rule::ProvenanceLength)],
            });
        }
    }
    entries.sort_by_key(|(span, _, _)| (span.start, span.end));
    for pair in entries.windows(2) {
        let (prev, _, prev_triple) = &pair[0];
        let (next, _, next_triple) = &pair[1];
        if next.start < prev.end {
            return Err(CorpusError::InvalidSpan {
                id: raw.id.clone(),
                triple: next_triple.to_string(),
                reason: format!("overlaps span {prev_triple}"),
            });
        }
    }

    let spans: Vec<Span> = entries.iter().map(|(s, _, _)| *s).collect();
    let provenance: Vec<Provenance> = entries.iter().map(|(_, p, _)| *p).collect();
    let all_manual = provenance.iter().all(|p| *p == Provenance::Manual);
    let annotation = Annotation {
        spans,
        provenance,
        model_version: raw.model_version.filter(|_| !all_manual),
    };
    let doc = Abstract {
        id: raw.id,
        text: raw.data,
        meta: raw.meta.unwrap_or_default(),
    };
    Ok(AnnotatedAbstract::new(doc, annotation))
}

/// Writes `, ` between elements and `: ` after keys, the spacing of doccano exports.
struct DoccanoFormatter;

impl serde_json::ser::Formatter for DoccanoFormatter {
    fn begin_array_value<W: ?Sized + io::Write>(
        &mut self,
        writer: &mut W,
        first: bool,
    ) -> io::Result<()> {
        if first {
            Ok(())
        } else {
            writer.write_all(b", ")
        }
    }

    fn begin_object_key<W: ?Sized + io::Write>(
        &mut self,
        writer: &mut W,
        first: bool,
    ) -> io::Result<()> {
        if first {
            Ok(())
        } else {
            writer.write_all(b", ")
        }
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        writer.write_all(b": ")
    }
}

/// Serializes a record as one doccano JSON object (no trailing newline).
///
/// Key order is `id`, `data`, `label`; spans are emitted sorted by start.
pub fn serialize_doccano(aa: &AnnotatedAbstract) -> String {
    let mut order: Vec<usize> = (0..aa.annotation.spans.len()).collect();
    order.sort_by_key(|&i| (aa.annotation.spans[i].start, aa.annotation.spans[i].end));
    let spans: Vec<Span> = order.iter().map(|&i| aa.annotation.spans[i]).collect();
    let provenance: Vec<Provenance> = order
        .iter()
        .map(|&i| {
            aa.annotation
                .provenance
                .get(i)
                .copied()
                .unwrap_or(Provenance::Manual)
        })
        .collect();
    let all_manual = provenance.iter().all(|p| *p == Provenance::Manual);

    let out = RecordOut {
        id: &aa.doc.id,
        data: &aa.doc.text,
        label: &spans,
        meta: (!aa.doc.meta.is_empty()).then_some(&aa.doc.meta),
        provenance: (!all_manual).then_some(provenance.as_slice()),
        model_version: aa
            .annotation
            .model_version
            .as_deref()
            .filter(|_| !all_manual),
    };
    let mut buf = Vec::with_capacity(aa.doc.text.len() + 64);
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, DoccanoFormatter);
    out.serialize(&mut ser)
        .expect("serializing to memory cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

/// Reads a JSON-Lines corpus; blank lines are ignored.
pub fn read_jsonl(text: &str) -> Result<Vec<AnnotatedAbstract>, CorpusError> {
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            parse_doccano_record(line).map_err(|e| CorpusError::AtLine {
                line: i + 1,
                source: Box::new(e),
            })
        })
        .collect()
}

pub fn write_jsonl(records: &[AnnotatedAbstract]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serialize_doccano(r));
        out.push('\n');
    }
    out
}

pub fn read_jsonl_file(path: &std::path::Path) -> Result<Vec<AnnotatedAbstract>, CorpusError> {
    read_jsonl(&std::fs::read_to_string(path)?)
}

/// Checks every record invariant; an empty list means the record is valid.
pub fn validate(aa: &AnnotatedAbstract) -> Vec<Violation> {
    let mut out = Vec::new();
    let len = aa.doc.text.chars().count();
    if aa.doc.text.trim().is_empty() {
        out.push(Violation::global(Rule::EmptyText));
    }
    let ann = &aa.annotation;
    for (i, span) in ann.spans.iter().enumerate() {
        if span.start >= span.end {
            out.push(Violation::at(Rule::InvertedSpan, i));
        }
        if span.end > len {
            out.push(Violation::at(Rule::OutOfBounds, i));
        }
        if i > 0 {
            let prev = &ann.spans[i - 1];
            if span.start < prev.start {
                out.push(Violation::at(Rule::Unsorted, i));
            } else if span.start < prev.end {
                out.push(Violation::at(Rule::Overlap, i));
            }
        }
    }
    if ann.provenance.len() != ann.spans.len() {
        out.push(Violation::global(Rule::ProvenanceLength));
    }
    if ann.model_version.is_some() && ann.provenance.iter().all(|p| *p == Provenance::Manual) {
        out.push(Violation::global(Rule::ModelVersionOnManual));
    }
    match aa.status {
        Status::Unlabeled if !ann.spans.is_empty() => {
            out.push(Violation::global(Rule::UnlabeledWithSpans))
        }
        Status::Auto | Status::Reviewed if ann.spans.is_empty() => {
            out.push(Violation::global(Rule::LabeledWithoutSpans))
        }
        _ => {}
    }
    if aa.status == Status::Reviewed {
        for (i, p) in ann.provenance.iter().enumerate() {
            if *p == Provenance::Auto {
                out.push(Violation::at(Rule::AutoInReviewed, i));
            }
        }
    }
    out
}

/// Non-whitespace characters not covered by any span. Legal, but worth a look in corpus QA.
pub fn coverage_gaps(aa: &AnnotatedAbstract) -> Vec<(usize, usize)> {
    if aa.annotation.spans.is_empty() {
        return Vec::new();
    }
    let chars: Vec<char> = aa.doc.text.chars().collect();
    let mut covered = vec![false; chars.len()];
    for span in &aa.annotation.spans {
        for c in covered
            .iter_mut()
            .take(span.end.min(chars.len()))
            .skip(span.start)
        {
            *c = true;
        }
    }
    let mut gaps = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if !covered[i] && !chars[i].is_whitespace() {
            let start = i;
            while i < chars.len() && !covered[i] {
                i += 1;
            }
            let mut end = i;
            while chars[end - 1].is_whitespace() {
                end -= 1;
            }
            gaps.push((start, end));
        } else {
            i += 1;
        }
    }
    gaps
}

/// Assigns every sentence the set of labels of all spans overlapping it.
///
/// Fails if a span touches no sentence, which means the segmentation and the annotation
/// disagree about where the text is.
pub fn align_spans_to_sentences(
    aa: &AnnotatedAbstract,
    sentences: &[Sentence],
) -> Result<Vec<LabelSet>, AlignError> {
    let mut sets = vec![LabelSet::empty(); sentences.len()];
    let mut first = 0;
    for (index, span) in aa.annotation.spans.iter().enumerate() {
        while first < sentences.len() && sentences[first].end <= span.start {
            first += 1;
        }
        let mut hit = false;
        for (offset, sentence) in sentences[first..].iter().enumerate() {
            if sentence.start >= span.end {
                break;
            }
            if span.overlaps(sentence.start, sentence.end) {
                sets[first + offset].insert(span.label);
                hit = true;
            }
        }
        if !hit {
            return Err(AlignError::Orphan { index, span: *span });
        }
    }
    Ok(sets)
}

/// Counts spans per label, a convenience shared by reports.
pub fn span_label_counts(records: &[AnnotatedAbstract]) -> BTreeMap<MoveLabel, usize> {
    let mut counts = BTreeMap::new();
    for r in records {
        for s in &r.annotation.spans {
            *counts.entry(s.label).or_insert(0) += 1;
        }
    }
    counts
}

/// Slices `text` by code-point offsets.
pub fn char_slice(text: &str, start: usize, end: usize) -> &str {
    let mut indices = text
        .char_indices()
        .map(|(b, _)| b)
        .chain(std::iter::once(text.len()));
    let mut b_start = text.len();
    let mut b_end = text.len();
    for (ci, b) in (&mut indices).enumerate() {
        if ci == start {
            b_start = b;
        }
        if ci == end {
            b_end = b;
            break;
        }
    }
    &text[b_start..b_end.max(b_start)]
}

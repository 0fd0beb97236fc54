//! Turning downloaded metadata files into abstracts, and abstracts into sentences.

mod bib;
mod segment;
mod tabular;

use thiserror::Error;

pub use bib::{clean_field, parse_bib, parse_bib_entries, BibEntry, BibImport};
pub use segment::{
    emit_sentence_lines, parse_abbreviation_list, segment_sentences, SegmenterConfig,
};
pub use tabular::{parse_tabular_export, ColumnMap, RowError, TabularImport};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("bibliography entry {key}: {message}")]
    Bib { key: String, message: String },
    #[error("no abstracts extracted ({read} records read, {skipped} skipped)")]
    EmptyResult { read: usize, skipped: usize },
    #[error("column {column:?} not found in header (available: {})", available.join(", "))]
    MissingColumn {
        column: String,
        available: Vec<String>,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

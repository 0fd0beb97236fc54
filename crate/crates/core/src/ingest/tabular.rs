//! Delimited database exports (TSV/CSV with a header row).

use std::collections::HashMap;
use std::str::FromStr;

use serde::Serialize;

use crate::corpus::{Abstract, AbstractId, AbstractMeta, Discipline};

use super::{bib::clean_field, IngestError};

/// Which header names hold which fields, plus the delimiter.
///
/// Parsed from specs such as `title=TI,abstract=AB,year=PY,venue=SO,sep=tab`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMap {
    pub abstract_col: String,
    pub title: Option<String>,
    pub year: Option<String>,
    pub venue: Option<String>,
    pub id: Option<String>,
    pub discipline: Option<String>,
    /// `None` means sniff from the header line.
    pub delimiter: Option<u8>,
}

impl ColumnMap {
    pub fn new(abstract_col: impl Into<String>) -> Self {
        ColumnMap {
            abstract_col: abstract_col.into(),
            title: None,
            year: None,
            venue: None,
            id: None,
            discipline: None,
            delimiter: None,
        }
    }
}

impl FromStr for ColumnMap {
    type Err = IngestError;

    fn from_str(spec: &str) -> Result<Self, Self::Err> {
        let mut map: HashMap<String, String> = HashMap::new();
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(|| {
                IngestError::Config(format!("column spec entry {part:?} is not key=value"))
            })?;
            map.insert(k.trim().to_lowercase(), v.trim().to_string());
        }
        let abstract_col = map
            .remove("abstract")
            .ok_or_else(|| IngestError::Config("column spec needs abstract=<column>".into()))?;
        let delimiter = match map.remove("sep").as_deref() {
            None => None,
            Some("tab") | Some("\\t") => Some(b'\t'),
            Some("comma") | Some(",") => Some(b','),
            Some("semicolon") => Some(b';'),
            Some(other) => {
                return Err(IngestError::Config(format!("unknown separator {other:?}")));
            }
        };
        let cm = ColumnMap {
            abstract_col,
            title: map.remove("title"),
            year: map.remove("year"),
            venue: map.remove("venue"),
            id: map.remove("id"),
            discipline: map.remove("discipline"),
            delimiter,
        };
        if let Some(unknown) = map.keys().next() {
            return Err(IngestError::Config(format!(
                "unknown column role {unknown:?}"
            )));
        }
        Ok(cm)
    }
}

/// A data row that could not be read; collected rather than aborting the import.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowError {
    /// 1-based line of the row in the file (the header is line 1).
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct TabularImport {
    pub abstracts: Vec<Abstract>,
    pub rows: usize,
    /// Lines of rows whose abstract cell was empty.
    pub skipped_empty: Vec<usize>,
    pub row_errors: Vec<RowError>,
}

fn sniff_delimiter(text: &str) -> u8 {
    let header = text.lines().next().unwrap_or("");
    if header.contains('\t') {
        b'\t'
    } else {
        b','
    }
}

/// Extracts one [`Abstract`] per data row with a non-empty abstract cell.
///
/// Ids come from the mapped id column when present and otherwise count up from `first_id`.
pub fn parse_tabular_export(
    text: &str,
    columns: &ColumnMap,
    first_id: i64,
) -> Result<TabularImport, IngestError> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let delimiter = columns.delimiter.unwrap_or_else(|| sniff_delimiter(text));
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .quoting(delimiter != b'\t')
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| IngestError::Config(format!("cannot read header row: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let find = |name: &str| -> Result<usize, IngestError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::MissingColumn {
                column: name.to_string(),
                available: headers.clone(),
            })
    };
    let optional = |name: &Option<String>| name.as_deref().map(&find).transpose();
    let abstract_idx = find(&columns.abstract_col)?;
    let title_idx = optional(&columns.title)?;
    let year_idx = optional(&columns.year)?;
    let venue_idx = optional(&columns.venue)?;
    let id_idx = optional(&columns.id)?;
    let discipline_idx = optional(&columns.discipline)?;

    let mut out = TabularImport {
        abstracts: Vec::new(),
        rows: 0,
        skipped_empty: Vec::new(),
        row_errors: Vec::new(),
    };
    // With CRLF endings the reader reports a record as starting on the previous line's
    // '\n', so skip line breaks before counting.
    let bytes = text.as_bytes();
    let newlines: Vec<usize> = text.match_indices('\n').map(|(i, _)| i).collect();
    let line_at = |pos: Option<&csv::Position>| {
        pos.map(|p| {
            let mut b = p.byte() as usize;
            while b < bytes.len() && matches!(bytes[b], b'\r' | b'\n') {
                b += 1;
            }
            newlines.partition_point(|&nl| nl < b) + 1
        })
        .unwrap_or(0)
    };
    for record in reader.records() {
        out.rows += 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = line_at(e.position());
                out.row_errors.push(RowError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let line = line_at(record.position());
        if record.len() != headers.len() {
            out.row_errors.push(RowError {
                line,
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
            continue;
        }
        let cell = |idx: Option<usize>| {
            idx.map(|i| record.get(i).unwrap_or("").trim().to_string())
                .filter(|s| !s.is_empty())
        };
        let body = clean_field(record.get(abstract_idx).unwrap_or(""));
        if body.is_empty() {
            out.skipped_empty.push(line);
            continue;
        }
        let discipline = match cell(discipline_idx) {
            Some(d) => match d.parse::<Discipline>() {
                Ok(d) => Some(d),
                Err(message) => {
                    out.row_errors.push(RowError { line, message });
                    continue;
                }
            },
            None => None,
        };
        let id = match cell(id_idx) {
            Some(raw) => raw.parse::<AbstractId>().expect("infallible"),
            None => AbstractId::Int(first_id + out.abstracts.len() as i64),
        };
        out.abstracts.push(Abstract {
            id,
            text: body,
            meta: AbstractMeta {
                title: cell(title_idx).map(|t| clean_field(&t)),
                venue: cell(venue_idx),
                discipline,
                year: cell(year_idx).and_then(|y| y.parse().ok()),
            },
        });
    }
    if out.abstracts.is_empty() {
        return Err(IngestError::EmptyResult {
            read: out.rows,
            skipped: out.skipped_empty.len() + out.row_errors.len(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_column_specs() {
        let cm: ColumnMap = "title=TI, abstract=AB, year=PY, sep=tab".parse().unwrap();
        assert_eq!(cm.abstract_col, "AB");
        assert_eq!(cm.title.as_deref(), Some("TI"));
        assert_eq!(cm.delimiter, Some(b'\t'));
        assert!("title=TI".parse::<ColumnMap>().is_err());
        assert!("abstract=AB,color=red".parse::<ColumnMap>().is_err());
    }

    #[test]
    fn two_row_tsv() {
        let tsv = "Title\tAbstract\tYear\nFirst\tWe study heat. It works.\t2021\nSecond\tWe propose X.\t2022\n";
        let cm: ColumnMap = "title=Title,abstract=Abstract,year=Year".parse().unwrap();
        let import = parse_tabular_export(tsv, &cm, 1).unwrap();
        assert_eq!(import.abstracts.len(), 2);
        assert_eq!(import.abstracts[1].meta.title.as_deref(), Some("Second"));
        assert_eq!(import.abstracts[1].meta.year, Some(2022));
        assert_eq!(import.abstracts[1].id, AbstractId::Int(2));
    }

    #[test]
    fn empty_abstract_is_skipped_and_reported() {
        let csv = "TI,AB\nA,\"Body one.\"\nB,\nC,\"Body, three.\"\n";
        let cm: ColumnMap = "title=TI,abstract=AB".parse().unwrap();
        let import = parse_tabular_export(csv, &cm, 10).unwrap();
        assert_eq!(import.abstracts.len(), 2);
        assert_eq!(import.skipped_empty, vec![3]);
        assert_eq!(import.abstracts[1].text, "Body, three.");
        assert_eq!(import.abstracts[1].id, AbstractId::Int(11));
    }

    #[test]
    fn missing_column_is_a_config_error() {
        let cm: ColumnMap = "abstract=Summary".parse().unwrap();
        let err = parse_tabular_export("Title\tAbstract\nx\ty\n", &cm, 1).unwrap_err();
        assert!(
            matches!(err, IngestError::MissingColumn { ref column, .. } if column == "Summary")
        );
    }

    #[test]
    fn ragged_rows_are_collected() {
        let tsv = "TI\tAB\nA\tGood one.\nB\tBad\textra\nC\tGood two.\n";
        let cm: ColumnMap = "title=TI,abstract=AB".parse().unwrap();
        let import = parse_tabular_export(tsv, &cm, 1).unwrap();
        assert_eq!(import.abstracts.len(), 2);
        assert_eq!(import.row_errors.len(), 1);
        assert_eq!(import.row_errors[0].line, 3);
    }

    #[test]
    fn crlf_line_numbers() {
        let csv = "TI,AB\r\nA,x\r\nB,\r\nC,y\r\n";
        let cm: ColumnMap = "title=TI,abstract=AB".parse().unwrap();
        assert_eq!(
            parse_tabular_export(csv, &cm, 1).unwrap().skipped_empty,
            vec![3]
        );
    }
}

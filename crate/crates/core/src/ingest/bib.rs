//! Bibliography metadata (`@type{key, field = value, ...}`) parsing.
//!
//! Handles braced and quoted values, bare numbers, `#` concatenation, `@string` macros and the
//! usual month macros. `@comment` and `@preamble` blocks are skipped.

use std::collections::HashMap;

use crate::corpus::{Abstract, AbstractId, AbstractMeta};

use super::IngestError;

/// One parsed entry with lowercase field names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BibEntry {
    pub kind: String,
    pub key: String,
    pub fields: HashMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct BibImport {
    pub abstracts: Vec<Abstract>,
    /// Entries read, including those without an abstract.
    pub entries: usize,
    /// Keys of entries skipped for lacking an abstract.
    pub skipped: Vec<String>,
}

struct Parser {
    chars: Vec<char>,
    pos: usize,
    macros: HashMap<String, String>,
}

const MONTHS: [(&str, &str); 12] = [
    ("jan", "January"),
    ("feb", "February"),
    ("mar", "March"),
    ("apr", "April"),
    ("may", "May"),
    ("jun", "June"),
    ("jul", "July"),
    ("aug", "August"),
    ("sep", "September"),
    ("oct", "October"),
    ("nov", "November"),
    ("dec", "December"),
];

impl Parser {
    fn new(src: &str) -> Self {
        Parser {
            chars: src.chars().collect(),
            pos: 0,
            macros: MONTHS
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn ident(&mut self) -> String {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_alphanumeric() || "_-:.+/'".contains(c)) {
            self.pos += 1;
        }
        self.chars[start..self.pos].iter().collect()
    }

    fn err(&self, key: &str, message: impl Into<String>) -> IngestError {
        IngestError::Bib {
            key: if key.is_empty() {
                "<unknown>".into()
            } else {
                key.into()
            },
            message: message.into(),
        }
    }

    /// Skips a balanced `{...}` or `(...)` block whose opener is at `pos`.
    fn skip_block(&mut self, key: &str) -> Result<(), IngestError> {
        let open = self
            .peek()
            .ok_or_else(|| self.err(key, "truncated entry"))?;
        let close = if open == '(' { ')' } else { '}' };
        let mut depth = 0usize;
        while let Some(c) = self.peek() {
            self.pos += 1;
            if c == open {
                depth += 1;
            } else if c == close {
                depth -= 1;
                if depth == 0 {
                    return Ok(());
                }
            }
        }
        Err(self.err(key, "unbalanced braces"))
    }

    fn braced(&mut self, key: &str) -> Result<String, IngestError> {
        // at '{'
        self.pos += 1;
        let start = self.pos;
        let mut depth = 1usize;
        while let Some(c) = self.peek() {
            match c {
                '{' => depth += 1,
                '}' => {
                    depth -= 1;
                    if depth == 0 {
                        let v = self.chars[start..self.pos].iter().collect();
                        self.pos += 1;
                        return Ok(v);
                    }
                }
                '\\' => self.pos += 1,
                _ => {}
            }
            self.pos += 1;
        }
        Err(self.err(key, "unbalanced braces in field value"))
    }

    fn quoted(&mut self, key: &str) -> Result<String, IngestError> {
        // at '"'
        self.pos += 1;
        let start = self.pos;
        let mut depth = 0usize;
        while let Some(c) = self.peek() {
            match c {
                '{' => depth += 1,
                '}' => {
                    if depth == 0 {
                        return Err(self.err(key, "unbalanced braces in quoted value"));
                    }
                    depth -= 1;
                }
                '\\' => self.pos += 1,
                '"' if depth == 0 => {
                    let v = self.chars[start..self.pos].iter().collect();
                    self.pos += 1;
                    return Ok(v);
                }
                _ => {}
            }
            self.pos += 1;
        }
        Err(self.err(key, "unterminated quoted value"))
    }

    fn value(&mut self, key: &str) -> Result<String, IngestError> {
        let mut out = String::new();
        loop {
            self.skip_ws();
            match self.peek() {
                Some('{') => out.push_str(&self.braced(key)?),
                Some('"') => out.push_str(&self.quoted(key)?),
                Some(c) if c.is_alphanumeric() => {
                    let word = self.ident();
                    match self.macros.get(&word.to_lowercase()) {
                        Some(v) => out.push_str(v),
                        None => out.push_str(&word),
                    }
                }
                Some(c) => return Err(self.err(key, format!("unexpected {c:?} in field value"))),
                None => return Err(self.err(key, "truncated entry")),
            }
            self.skip_ws();
            if self.peek() == Some('#') {
                self.pos += 1;
            } else {
                return Ok(out);
            }
        }
    }

    /// Parses `name = value` pairs up to the closing delimiter.
    fn fields(&mut self, key: &str, close: char) -> Result<HashMap<String, String>, IngestError> {
        let mut fields = HashMap::new();
        loop {
            self.skip_ws();
            match self.peek() {
                Some(c) if c == close => {
                    self.pos += 1;
                    return Ok(fields);
                }
                Some(',') => {
                    self.pos += 1;
                    continue;
                }
                Some('@') => return Err(self.err(key, "unbalanced braces: entry not closed")),
                None => return Err(self.err(key, "truncated entry")),
                _ => {}
            }
            let name = self.ident().to_lowercase();
            if name.is_empty() {
                let c = self.peek().unwrap_or(' ');
                return Err(self.err(key, format!("expected field name, found {c:?}")));
            }
            self.skip_ws();
            if self.peek() != Some('=') {
                return Err(self.err(key, format!("expected '=' after field {name}")));
            }
            self.pos += 1;
            let value = self.value(key)?;
            fields.insert(name, value);
        }
    }

    fn entries(&mut self) -> Result<Vec<BibEntry>, IngestError> {
        let mut out = Vec::new();
        loop {
            while matches!(self.peek(), Some(c) if c != '@') {
                self.pos += 1;
            }
            if self.peek().is_none() {
                return Ok(out);
            }
            self.pos += 1;
            let kind = self.ident().to_lowercase();
            self.skip_ws();
            let open = match self.peek() {
                Some(c @ ('{' | '(')) => c,
                _ => return Err(self.err("", format!("expected '{{' after @{kind}"))),
            };
            let close = if open == '(' { ')' } else { '}' };
            match kind.as_str() {
                "comment" | "preamble" => self.skip_block("")?,
                "string" => {
                    self.pos += 1;
                    let fields = self.fields("@string", close)?;
                    for (k, v) in fields {
                        self.macros.insert(k, v);
                    }
                }
                _ => {
                    self.pos += 1;
                    self.skip_ws();
                    let key = self.ident();
                    self.skip_ws();
                    match self.peek() {
                        Some(',') => self.pos += 1,
                        Some(c) if c == close => {}
                        _ => return Err(self.err(&key, "expected ',' after entry key")),
                    }
                    let fields = self.fields(&key, close)?;
                    out.push(BibEntry { kind, key, fields });
                }
            }
        }
    }
}

/// Parses every entry of a bibliography file.
pub fn parse_bib_entries(text: &str) -> Result<Vec<BibEntry>, IngestError> {
    Parser::new(text).entries()
}

const ACCENTS: &str = "\"'`^~";

/// `\"o` and friends; unknown combinations keep the bare letter.
fn accented(accent: char, letter: char) -> char {
    const TABLE: [(char, &str, &str); 5] = [
        ('"', "aeiouyAEIOU", "äëïöüÿÄËÏÖÜ"),
        ('\'', "aeiouyAEIOUcn", "áéíóúýÁÉÍÓÚćń"),
        ('`', "aeiouAEIOU", "àèìòùÀÈÌÒÙ"),
        ('^', "aeiouAEIOU", "âêîôûÂÊÎÔÛ"),
        ('~', "anoANO", "ãñõÃÑÕ"),
    ];
    TABLE
        .iter()
        .find(|(a, _, _)| *a == accent)
        .and_then(|(_, plain, marked)| {
            plain
                .chars()
                .position(|c| c == letter)
                .and_then(|i| marked.chars().nth(i))
        })
        .unwrap_or(letter)
}

/// Turns markup in a field value into plain text: drops protective braces and command names,
/// unescapes special characters and collapses whitespace.
pub fn clean_field(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    let mut chars = value.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '{' | '}' => {}
            '~' => out.push(' '),
            '\\' => match chars.peek().copied() {
                Some(n) if ACCENTS.contains(n) => {
                    chars.next();
                    if chars.peek() == Some(&'{') {
                        chars.next();
                    }
                    if let Some(letter) = chars.next_if(|x| x.is_ascii_alphabetic()) {
                        out.push(accented(n, letter));
                    }
                    if chars.peek() == Some(&'}') {
                        chars.next();
                    }
                }
                Some(n) if "%&_$#{}".contains(n) => {
                    out.push(n);
                    chars.next();
                }
                Some(n) if n.is_ascii_alphabetic() => {
                    while matches!(chars.peek(), Some(x) if x.is_ascii_alphabetic()) {
                        chars.next();
                    }
                }
                Some('\\') => {
                    out.push(' ');
                    chars.next();
                }
                _ => {}
            },
            _ => out.push(c),
        }
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Extracts one [`Abstract`] per entry that has a non-empty `abstract` field.
///
/// Ids are assigned sequentially from `first_id`.
pub fn parse_bib(text: &str, first_id: i64) -> Result<BibImport, IngestError> {
    let entries = parse_bib_entries(text)?;
    let mut abstracts = Vec::new();
    let mut skipped = Vec::new();
    for entry in &entries {
        let body = entry
            .fields
            .get("abstract")
            .map(|v| clean_field(v))
            .unwrap_or_default();
        if body.is_empty() {
            skipped.push(entry.key.clone());
            continue;
        }
        let meta = AbstractMeta {
            title: entry.fields.get("title").map(|t| clean_field(t)),
            venue: entry
                .fields
                .get("booktitle")
                .or_else(|| entry.fields.get("journal"))
                .map(|v| clean_field(v)),
            discipline: None,
            year: entry
                .fields
                .get("year")
                .and_then(|y| clean_field(y).parse().ok()),
        };
        abstracts.push(Abstract {
            id: AbstractId::Int(first_id + abstracts.len() as i64),
            text: body,
            meta,
        });
    }
    if abstracts.is_empty() {
        return Err(IngestError::EmptyResult {
            read: entries.len(),
            skipped: skipped.len(),
        });
    }
    Ok(BibImport {
        abstracts,
        entries: entries.len(),
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
@string{acl = "Proceedings of the Annual Meeting"}
@comment{ generated export }
@inproceedings{su-etal-2022-rocbert,
    title = "{R}o{CB}ert: Robust {C}hinese Bert",
    author = "Su, Hui and Shi, Weiwei",
    booktitle = acl # " (Volume 1: Long Papers)",
    month = may,
    year = "2022",
    abstract = "Large-scale pretrained language models have achieved {SOTA} results on {NLP} tasks. However, they have been shown vulnerable.",
}
@inproceedings{no-abstract-2021,
    title = {A paper without abstract},
    year = 2021
}
@article{journal-2020,
    title = {Heat transfer in \textit{boiling} fluids},
    journal = {International Journal of Heat and Mass Transfer},
    year = {2020},
    abstract = {We study 3.5~\% of {surfactant} mixtures
                across two regimes.}
}
"#;

    #[test]
    fn extracts_entries_with_abstracts() {
        let import = parse_bib(SAMPLE, 1).unwrap();
        assert_eq!(import.entries, 3);
        assert_eq!(import.abstracts.len(), 2);
        assert_eq!(import.skipped, vec!["no-abstract-2021".to_string()]);

        let first = &import.abstracts[0];
        assert_eq!(first.id, AbstractId::Int(1));
        assert!(first
            .text
            .starts_with("Large-scale pretrained language models have achieved SOTA results"));
        assert_eq!(
            first.meta.title.as_deref(),
            Some("RoCBert: Robust Chinese Bert")
        );
        assert_eq!(
            first.meta.venue.as_deref(),
            Some("Proceedings of the Annual Meeting (Volume 1: Long Papers)")
        );
        assert_eq!(first.meta.year, Some(2022));

        let second = &import.abstracts[1];
        assert_eq!(
            second.text,
            "We study 3.5 % of surfactant mixtures across two regimes."
        );
        assert_eq!(
            second.meta.title.as_deref(),
            Some("Heat transfer in boiling fluids")
        );
    }

    #[test]
    fn accents_become_letters() {
        assert_eq!(clean_field(r#"{G}{\"o}del"#), "Gödel");
        assert_eq!(clean_field(r"\'{e}t\'e"), "été");
        assert_eq!(clean_field(r"na\~{n}o 50\% \textbf{bold}"), "naño 50% bold");
    }

    #[test]
    fn unbalanced_entry_names_its_key() {
        let err = parse_bib(
            "@article{broken-key,\n title = {Open {brace},\n year = 2020\n",
            1,
        )
        .unwrap_err();
        match err {
            IngestError::Bib { key, .. } => assert_eq!(key, "broken-key"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn no_abstracts_is_an_empty_result() {
        let err = parse_bib("@misc{a, title = {x}}\n@misc{b, title = {y}}", 1).unwrap_err();
        assert!(matches!(
            err,
            IngestError::EmptyResult {
                read: 2,
                skipped: 2
            }
        ));
        assert!(matches!(
            parse_bib("", 1),
            Err(IngestError::EmptyResult { read: 0, .. })
        ));
    }
}

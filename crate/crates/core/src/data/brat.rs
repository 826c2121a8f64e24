//! BRAT standoff ingestion (.txt/.ann pairs) and the matching serializer.
//!
//! Only text-bound annotations (`T` lines) are read; relation, event,
//! attribute, and note lines are skipped. Offsets are byte offsets into the
//! UTF-8 text. An annotation's token span covers every token whose byte range
//! intersects the annotated range, so partial coverage of a token still
//! includes it.

use std::fs;
use std::path::Path;

use super::tokenize::{tokenize, Token};
use super::DataError;
use crate::span::{AssertionClass, LabeledSpan, TokenSpan};

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    pub tokens: Vec<Token>,
    pub gold: Vec<LabeledSpan>,
}

impl Document {
    pub fn token_texts(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.text.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn check_gold_in_range(&self) -> Result<(), DataError> {
        for g in &self.gold {
            if g.span.end() >= self.tokens.len() {
                return Err(DataError::BadFormat {
                    file: self.id.clone(),
                    message: format!(
                        "gold span [{},{}] exceeds document length {}",
                        g.span.start(),
                        g.span.end(),
                        self.tokens.len()
                    ),
                });
            }
        }
        Ok(())
    }
}

/// Parse a .txt/.ann pair already read into memory. `file` names the
/// annotation source for diagnostics; `id` becomes the document id.
pub fn parse_brat(id: &str, text: &str, ann: &str, file: &str) -> Result<Document, DataError> {
    let tokens = tokenize(text);
    let mut gold = Vec::new();
    for (lineno, raw) in ann.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.trim_end_matches('\r');
        if line.is_empty() || !line.starts_with('T') {
            continue;
        }
        let mut fields = line.splitn(3, '\t');
        let _tag = fields.next();
        let middle = fields.next().ok_or_else(|| DataError::BadAnnotation {
            file: file.to_string(),
            line: lineno,
            message: "missing class/offset field".to_string(),
        })?;
        let surface = fields.next().ok_or_else(|| DataError::BadAnnotation {
            file: file.to_string(),
            line: lineno,
            message: "missing surface field".to_string(),
        })?;
        if middle.contains(';') {
            return Err(DataError::Discontinuous {
                file: file.to_string(),
                line: lineno,
            });
        }
        let mut parts = middle.split_whitespace();
        let class_name = parts.next().ok_or_else(|| DataError::BadAnnotation {
            file: file.to_string(),
            line: lineno,
            message: "empty class/offset field".to_string(),
        })?;
        let class = AssertionClass::from_name(class_name).ok_or_else(|| {
            DataError::UnknownClass {
                file: file.to_string(),
                line: lineno,
                name: class_name.to_string(),
            }
        })?;
        let start: usize = parse_offset(parts.next(), file, lineno)?;
        let end: usize = parse_offset(parts.next(), file, lineno)?;
        if parts.next().is_some() {
            return Err(DataError::BadAnnotation {
                file: file.to_string(),
                line: lineno,
                message: "trailing content in offset field".to_string(),
            });
        }
        if start >= end || end > text.len() || !text.is_char_boundary(start)
            || !text.is_char_boundary(end)
        {
            return Err(DataError::BadAnnotation {
                file: file.to_string(),
                line: lineno,
                message: format!("offsets {start}..{end} do not address the text"),
            });
        }
        let actual = text[start..end].replace('\n', " ");
        if actual != surface {
            return Err(DataError::SurfaceMismatch {
                file: file.to_string(),
                line: lineno,
                cited: surface.to_string(),
                actual,
            });
        }
        let span = char_span_to_token_span(&tokens, start, end).ok_or_else(|| {
            DataError::BadAnnotation {
                file: file.to_string(),
                line: lineno,
                message: format!("offsets {start}..{end} cover no token"),
            }
        })?;
        let labeled = LabeledSpan::new(span, class).map_err(|e| DataError::BadAnnotation {
            file: file.to_string(),
            line: lineno,
            message: e.to_string(),
        })?;
        gold.push(labeled);
    }
    let doc = Document {
        id: id.to_string(),
        tokens,
        gold,
    };
    doc.check_gold_in_range()?;
    Ok(doc)
}

fn parse_offset(field: Option<&str>, file: &str, line: usize) -> Result<usize, DataError> {
    field
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| DataError::BadAnnotation {
            file: file.to_string(),
            line,
            message: "offsets must be two unsigned integers".to_string(),
        })
}

/// Token span covering every token that overlaps the byte range, or None if
/// the range touches no token.
fn char_span_to_token_span(tokens: &[Token], start: usize, end: usize) -> Option<TokenSpan> {
    let mut first = None;
    let mut last = None;
    for (i, t) in tokens.iter().enumerate() {
        if t.start < end && t.end > start {
            if first.is_none() {
                first = Some(i);
            }
            last = Some(i);
        }
    }
    match (first, last) {
        (Some(f), Some(l)) => TokenSpan::new(f, l).ok(),
        _ => None,
    }
}

/// Emit the document's gold spans in BRAT standoff form against `text`.
/// Round-trips through `parse_brat` for any document produced by it.
pub fn serialize_brat(doc: &Document, text: &str) -> String {
    let mut out = String::new();
    for (i, g) in doc.gold.iter().enumerate() {
        let byte_start = doc.tokens[g.span.start()].start;
        let byte_end = doc.tokens[g.span.end()].end;
        let surface = text[byte_start..byte_end].replace('\n', " ");
        out.push_str(&format!(
            "T{}\t{} {} {}\t{}\n",
            i + 1,
            g.class_id.name(),
            byte_start,
            byte_end,
            surface
        ));
    }
    out
}

/// Load every .txt file in a directory (with its optional .ann sibling),
/// sorted by file stem. A missing .ann file means an unannotated document.
pub fn load_corpus_dir(dir: &Path) -> Result<Vec<Document>, DataError> {
    let mut stems: Vec<String> = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("txt") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.push(stem.to_string());
            }
        }
    }
    stems.sort();
    let mut docs = Vec::with_capacity(stems.len());
    for stem in stems {
        let txt_path = dir.join(format!("{stem}.txt"));
        let ann_path = dir.join(format!("{stem}.ann"));
        let text = fs::read_to_string(&txt_path)?;
        let ann = if ann_path.exists() {
            fs::read_to_string(&ann_path)?
        } else {
            String::new()
        };
        docs.push(parse_brat(
            &stem,
            &text,
            &ann,
            &ann_path.display().to_string(),
        )?);
    }
    Ok(docs)
}

//! CSV formats: submissions (`id,landmarks`) and label tables (`id,landmark_id`).
//!
//! Files are UTF-8 with `\n` line endings and a mandatory header row.
//! Parse errors carry 1-based line numbers (the header is line 1).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use csv::StringRecord;

use crate::error::{Error, Result};
use crate::model::{ClassLabel, Guess, ImageId, LabelTable, Prediction, Submission};

pub const SUBMISSION_HEADER: [&str; 2] = ["id", "landmarks"];
pub const LABEL_HEADER: [&str; 2] = ["id", "landmark_id"];

/// Shortest decimal that round-trips the value, capped at 9 significant digits.
pub fn format_confidence(value: f64) -> String {
    if value == 0.0 {
        return "0".to_string();
    }
    for digits in 1..=9usize {
        let candidate: f64 = format!("{:.*e}", digits - 1, value).parse().unwrap();
        if candidate == value || digits == 9 {
            return format!("{candidate}");
        }
    }
    unreachable!()
}

pub(crate) fn parse_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads a headed CSV, checking the header and the field count of every row.
pub(crate) fn read_records(path: &Path, header: &[&str]) -> Result<Vec<(u64, StringRecord)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::None)
        .from_reader(text.as_bytes());
    let found = reader
        .headers()
        .map_err(|e| parse_error(path, 1, e.to_string()))?
        .clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(parse_error(
            path,
            1,
            format!(
                "expected header {:?}, found {:?}",
                header.join(","),
                found.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_error(path, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != header.len() {
            return Err(parse_error(
                path,
                line,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        rows.push((line, record));
    }
    Ok(rows)
}

pub(crate) fn parse_id(path: &Path, line: u64, text: &str) -> Result<ImageId> {
    ImageId::new(text).map_err(|e| parse_error(path, line, e.to_string()))
}

pub(crate) fn parse_label(path: &Path, line: u64, text: &str) -> Result<ClassLabel> {
    text.parse()
        .map_err(|_| parse_error(path, line, format!("invalid class label {text:?}")))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn submission_to_string(sub: &Submission) -> String {
    let mut out = String::with_capacity(sub.len() * 24 + 16);
    out.push_str("id,landmarks\n");
    for row in &sub.rows {
        match row.guess {
            Some(g) => {
                let _ = writeln!(
                    out,
                    "{},{} {}",
                    row.image,
                    g.label,
                    format_confidence(g.confidence)
                );
            }
            None => {
                let _ = writeln!(out, "{},", row.image);
            }
        }
    }
    out
}

pub fn save_submission(sub: &Submission, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &submission_to_string(sub))
}

pub fn load_submission(path: impl AsRef<Path>) -> Result<Submission> {
    let path = path.as_ref();
    let mut rows = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (line, record) in read_records(path, &SUBMISSION_HEADER)? {
        let image = parse_id(path, line, &record[0])?;
        if !seen.insert(image.clone()) {
            return Err(parse_error(path, line, format!("duplicate id {image}")));
        }
        let field = &record[1];
        if field.is_empty() {
            rows.push(Prediction::empty(image));
            continue;
        }
        let mut parts = field.split(' ');
        let (Some(label), Some(conf), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(parse_error(
                path,
                line,
                format!("expected \"<label> <confidence>\", found {field:?}"),
            ));
        };
        let label = parse_label(path, line, label)?;
        let confidence: f64 = conf
            .parse()
            .map_err(|_| parse_error(path, line, format!("invalid confidence {conf:?}")))?;
        if !confidence.is_finite() {
            return Err(parse_error(path, line, "non-finite confidence"));
        }
        rows.push(Prediction {
            image,
            guess: Some(Guess { label, confidence }),
        });
    }
    Ok(Submission { rows })
}

pub fn load_label_table(path: impl AsRef<Path>) -> Result<LabelTable> {
    let path = path.as_ref();
    let mut table = LabelTable::new();
    for (line, record) in read_records(path, &LABEL_HEADER)? {
        let image = parse_id(path, line, &record[0])?;
        let label = parse_label(path, line, &record[1])?;
        if table.insert(image.clone(), label).is_some() {
            return Err(Error::DuplicateId(image));
        }
    }
    Ok(table)
}

/// Writes the table in ascending id order.
pub fn save_label_table(table: &LabelTable, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("id,landmark_id\n");
    for (id, label) in table {
        let _ = writeln!(out, "{id},{label}");
    }
    write_text(path.as_ref(), &out)
}

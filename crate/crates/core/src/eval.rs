//! GAP (global average precision) and per-step score tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::csvio::{parse_id, parse_label, read_records, write_text};
use crate::error::{Error, Result};
use crate::model::{ClassLabel, ImageId, Submission};

/// Test-set truth: `None` marks a distractor.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    pub entries: BTreeMap<ImageId, Option<ClassLabel>>,
}

impl GroundTruth {
    pub fn new(entries: BTreeMap<ImageId, Option<ClassLabel>>) -> Self {
        GroundTruth { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &ImageId) -> Option<Option<ClassLabel>> {
        self.entries.get(id).copied()
    }

    /// Number of test images whose truth is a landmark.
    pub fn landmark_count(&self) -> usize {
        self.entries.values().filter(|v| v.is_some()).count()
    }
}

impl FromIterator<(ImageId, Option<ClassLabel>)> for GroundTruth {
    fn from_iter<I: IntoIterator<Item = (ImageId, Option<ClassLabel>)>>(iter: I) -> Self {
        GroundTruth {
            entries: iter.into_iter().collect(),
        }
    }
}

pub fn load_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    let path = path.as_ref();
    let mut entries = BTreeMap::new();
    for (line, rec) in read_records(path, &["id", "landmark_id"])? {
        let id = parse_id(path, line, &rec[0])?;
        let label = if rec[1].trim().is_empty() {
            None
        } else {
            Some(parse_label(path, line, rec[1].trim())?)
        };
        if entries.insert(id.clone(), label).is_some() {
            return Err(Error::DuplicateId(id));
        }
    }
    Ok(GroundTruth { entries })
}

pub fn truth_to_string(truth: &GroundTruth) -> String {
    let mut out = String::from("id,landmark_id\n");
    for (id, label) in &truth.entries {
        match label {
            Some(l) => {
                let _ = writeln!(out, "{id},{}", l.0);
            }
            None => {
                let _ = writeln!(out, "{id},");
            }
        }
    }
    out
}

pub fn save_truth(truth: &GroundTruth, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &truth_to_string(truth))
}

/// Micro-averaged precision over the ranked non-empty predictions, divided by
/// the number of landmark images in the truth. Zero when there are none.
pub fn gap(sub: &Submission, truth: &GroundTruth) -> Result<f64> {
    for row in &sub.rows {
        if !truth.entries.contains_key(&row.image) {
            return Err(Error::MissingId(row.image.clone()));
        }
    }
    let m = truth.landmark_count();
    if m == 0 {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    let mut sum = 0.0;
    for (i, row) in sub
        .ranked()
        .iter()
        .filter(|r| r.guess.is_some())
        .enumerate()
    {
        if truth.entries[&row.image].is_some() && truth.entries[&row.image] == row.label() {
            correct += 1;
            sum += correct as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / m as f64)
}

/// Fixed-width GAP table, one row per named step.
pub fn report(steps: &[(String, Submission)], truth: &GroundTruth) -> Result<String> {
    let name_width = steps.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(4);
    let mut out = String::new();
    let _ = writeln!(out, "{:<5} {:<name_width$} {:>7}", "#", "step", "GAP");
    let _ = writeln!(out, "{:-<5} {:-<name_width$} {:->7}", "", "", "");
    for (i, (name, sub)) in steps.iter().enumerate() {
        let score = gap(sub, truth)?;
        let _ = writeln!(
            out,
            "{:<5} {:<name_width$} {:>7.5}",
            format!("({})", i + 1),
            name,
            score
        );
    }
    Ok(out)
}

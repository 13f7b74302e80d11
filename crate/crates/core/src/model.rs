//! Shared value types: image ids, class labels, predictions and submissions.

use std::borrow::Borrow;
use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Opaque image identifier. Non-empty, no commas, no whitespace.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ImageId(String);

impl ImageId {
    pub fn new(value: impl Into<String>) -> Result<Self> {
        let value = value.into();
        if value.is_empty() || value.contains(',') || value.chars().any(char::is_whitespace) {
            return Err(Error::InvalidId(value));
        }
        Ok(ImageId(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ImageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for ImageId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ImageId::new(s)
    }
}

impl Borrow<str> for ImageId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

/// Landmark class id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClassLabel(pub u64);

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for ClassLabel {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        s.parse().map(ClassLabel)
    }
}

/// Map from image id to landmark class.
pub type LabelTable = BTreeMap<ImageId, ClassLabel>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Guess {
    pub label: ClassLabel,
    pub confidence: f64,
}

/// One submission row. `guess == None` is an empty (distractor) prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub image: ImageId,
    pub guess: Option<Guess>,
}

impl Prediction {
    pub fn new(image: ImageId, label: ClassLabel, confidence: f64) -> Self {
        Prediction {
            image,
            guess: Some(Guess { label, confidence }),
        }
    }

    pub fn empty(image: ImageId) -> Self {
        Prediction { image, guess: None }
    }

    pub fn confidence(&self) -> Option<f64> {
        self.guess.map(|g| g.confidence)
    }

    pub fn label(&self) -> Option<ClassLabel> {
        self.guess.map(|g| g.label)
    }
}

/// Canonical ranking comparator: non-empty before empty, confidence
/// descending, then ascending image id.
pub fn ranked_cmp(a: &Prediction, b: &Prediction) -> Ordering {
    match (a.guess, b.guess) {
        (Some(ga), Some(gb)) => gb
            .confidence
            .total_cmp(&ga.confidence)
            .then_with(|| a.image.cmp(&b.image)),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => a.image.cmp(&b.image),
    }
}

/// Ordered list of predictions, one per test image.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Submission {
    pub rows: Vec<Prediction>,
}

impl Submission {
    /// Builds a submission, rejecting duplicate ids and non-finite confidences.
    pub fn new(rows: Vec<Prediction>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(rows.len());
        for row in &rows {
            if !seen.insert(&row.image) {
                return Err(Error::DuplicateId(row.image.clone()));
            }
            if let Some(c) = row.confidence() {
                if !c.is_finite() {
                    return Err(Error::Invalid(format!(
                        "non-finite confidence for {}",
                        row.image
                    )));
                }
            }
        }
        Ok(Submission { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows sorted in canonical ranked order.
    pub fn ranked(&self) -> Vec<Prediction> {
        let mut rows = self.rows.clone();
        rows.sort_by(ranked_cmp);
        rows
    }

    /// Consumes the submission and returns it re-ordered by rank.
    pub fn into_ranked(mut self) -> Submission {
        self.rows.sort_by(ranked_cmp);
        self
    }

    pub fn ids(&self) -> impl Iterator<Item = &ImageId> {
        self.rows.iter().map(|r| &r.image)
    }

    pub fn get(&self, id: &ImageId) -> Option<&Prediction> {
        self.rows.iter().find(|r| &r.image == id)
    }

    pub fn by_id(&self) -> BTreeMap<&ImageId, &Prediction> {
        self.rows.iter().map(|r| (&r.image, r)).collect()
    }

    /// Errors unless both submissions cover exactly the same ids.
    pub fn check_same_ids(&self, other: &Submission) -> Result<()> {
        let mine: HashSet<&ImageId> = self.ids().collect();
        let theirs: HashSet<&ImageId> = other.ids().collect();
        if let Some(id) = mine.symmetric_difference(&theirs).min() {
            return Err(Error::Invalid(format!(
                "submissions cover different image ids (first difference: {id})"
            )));
        }
        if mine.len() != self.len() || theirs.len() != other.len() {
            return Err(Error::Invalid("submission contains duplicate ids".into()));
        }
        Ok(())
    }
}

//! Caption records, control axes and paired samples.
//!
//! Captions are stored as newline-delimited JSON, one record per line:
//!
//! ```json
//! {"id":"c1","text":"a red fox in the snow","concept":"fox","axis":"color","hn_of":null}
//! ```
//!
//! `axis` is `null` for records generated without a modification axis, and
//! `hn_of` is set only on hard-negative records, pointing at the base caption.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub id: String,
    pub text: String,
    pub concept: String,
    #[serde(default)]
    pub axis: Option<String>,
    #[serde(default)]
    pub hn_of: Option<String>,
}

impl CaptionRecord {
    pub fn new(id: impl Into<String>, text: impl Into<String>, concept: impl Into<String>) -> Self {
        CaptionRecord { id: id.into(), text: text.into(), concept: concept.into(), axis: None, hn_of: None }
    }

    pub fn with_axis(mut self, axis: impl Into<String>) -> Self {
        self.axis = Some(axis.into());
        self
    }

    pub fn hard_negative_of(mut self, base: impl Into<String>) -> Self {
        self.hn_of = Some(base.into());
        self
    }

    pub fn is_hard_negative(&self) -> bool {
        self.hn_of.is_some()
    }
}

/// Ordered set of semantic modification axes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisSet {
    axes: Vec<String>,
}

/// Axes kept after pruning the ones generators could not render reliably
/// (`texture` and `size` are absent on purpose).
pub const DEFAULT_AXES: [&str; 8] =
    ["background", "color", "lighting", "material", "perspective", "position", "style", "concept"];

/// Axis that swaps the subject itself.
pub const CONCEPT_AXIS: &str = "concept";

impl Default for AxisSet {
    fn default() -> Self {
        AxisSet { axes: DEFAULT_AXES.iter().map(|s| s.to_string()).collect() }
    }
}

impl AxisSet {
    pub fn new<I, S>(axes: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for a in axes {
            let a = a.into();
            if seen.insert(a.clone()) {
                out.push(a);
            }
        }
        if out.is_empty() {
            return Err(Error::Empty("axis set"));
        }
        Ok(AxisSet { axes: out })
    }

    /// Axis set usable for hard-negative generation: must contain `concept`.
    pub fn for_hard_negatives<I, S>(axes: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set = Self::new(axes)?;
        if !set.contains(CONCEPT_AXIS) {
            return Err(Error::invalid("hard-negative axis set must contain `concept`"));
        }
        Ok(set)
    }

    pub fn contains(&self, axis: &str) -> bool {
        self.axes.iter().any(|a| a == axis)
    }

    pub fn len(&self) -> usize {
        self.axes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.axes.is_empty()
    }

    pub fn as_slice(&self) -> &[String] {
        &self.axes
    }

    /// Set without the listed axes, order preserved.
    pub fn without(&self, removed: &[&str]) -> Result<Self> {
        Self::new(self.axes.iter().filter(|a| !removed.contains(&a.as_str())).cloned())
    }
}

/// Checks `hn_of` references and axis membership.
pub fn validate_captions(records: &[CaptionRecord], axes: &AxisSet) -> Result<()> {
    let mut by_id: HashMap<&str, &CaptionRecord> = HashMap::new();
    for r in records {
        if by_id.insert(r.id.as_str(), r).is_some() {
            return Err(Error::InvalidCaptions(format!("duplicate id `{}`", r.id)));
        }
    }
    for r in records {
        if let Some(axis) = &r.axis {
            if !axes.contains(axis) {
                return Err(Error::InvalidCaptions(format!("record `{}` uses unknown axis `{axis}`", r.id)));
            }
        }
        if let Some(base) = &r.hn_of {
            match by_id.get(base.as_str()) {
                None => {
                    return Err(Error::InvalidCaptions(format!(
                        "record `{}` is a hard negative of missing record `{base}`",
                        r.id
                    )))
                }
                Some(b) if b.hn_of.is_some() => {
                    return Err(Error::InvalidCaptions(format!(
                        "record `{}` points at `{base}`, which is itself a hard negative",
                        r.id
                    )))
                }
                Some(_) => {}
            }
        }
    }
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec =
            serde_json::from_str(&line).map_err(|source| Error::Json { path: path.to_owned(), line: i + 1, source })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).expect("serializable record");
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_captions(path: &Path) -> Result<Vec<CaptionRecord>> {
    read_jsonl(path)
}

pub fn write_captions(path: &Path, records: &[CaptionRecord]) -> Result<()> {
    write_jsonl(path, records)
}

/// A base caption, its positive image rows and its optional hard negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSample {
    pub base: CaptionRecord,
    pub positives: Vec<usize>,
    pub negative: Option<CaptionRecord>,
    pub negative_images: Option<Vec<usize>>,
}

impl PairedSample {
    pub fn new(base: CaptionRecord, positives: Vec<usize>) -> Self {
        PairedSample { base, positives, negative: None, negative_images: None }
    }

    pub fn with_negative(mut self, negative: CaptionRecord, images: Option<Vec<usize>>) -> Self {
        self.negative = Some(negative);
        self.negative_images = images;
        self
    }

    pub fn n_positives(&self) -> usize {
        self.positives.len()
    }

    pub fn hn_id(&self) -> Option<&str> {
        self.negative.as_ref().map(|n| n.id.as_str())
    }

    /// `image_rows` is the row count of the image matrix the indices refer to.
    pub fn validate(&self, image_rows: usize, negatives_have_images: bool) -> Result<()> {
        if self.positives.is_empty() {
            return Err(Error::InvalidCaptions(format!("sample `{}` has no positives", self.base.id)));
        }
        let rows = self.positives.iter().chain(self.negative_images.iter().flatten());
        if let Some(&r) = rows.into_iter().find(|&&r| r >= image_rows) {
            return Err(Error::InvalidCaptions(format!(
                "sample `{}` references image row {r} of {image_rows}",
                self.base.id
            )));
        }
        if negatives_have_images && self.negative.is_some() != self.negative_images.is_some() {
            return Err(Error::InvalidCaptions(format!(
                "sample `{}`: hard-negative caption and images must come together",
                self.base.id
            )));
        }
        if let Some(neg) = &self.negative {
            if neg.hn_of.as_deref() != Some(self.base.id.as_str()) {
                return Err(Error::InvalidCaptions(format!(
                    "negative `{}` does not point at base `{}`",
                    neg.id, self.base.id
                )));
            }
        }
        Ok(())
    }
}

/// Groups base records with their hard negatives. Image rows are assigned
/// contiguously: base caption k owns rows `k*n_pos .. (k+1)*n_pos`.
pub fn pair_captions(records: &[CaptionRecord], n_pos: usize) -> Result<Vec<PairedSample>> {
    if n_pos == 0 {
        return Err(Error::invalid("n_pos must be >= 1"));
    }
    let mut negatives: HashMap<&str, &CaptionRecord> = HashMap::new();
    for r in records {
        if let Some(base) = &r.hn_of {
            if negatives.insert(base.as_str(), r).is_some() {
                return Err(Error::InvalidCaptions(format!("`{base}` has several hard negatives")));
            }
        }
    }
    let mut out = Vec::new();
    for r in records.iter().filter(|r| !r.is_hard_negative()) {
        let k = out.len();
        let mut s = PairedSample::new(r.clone(), (k * n_pos..(k + 1) * n_pos).collect());
        if let Some(neg) = negatives.get(r.id.as_str()) {
            s = s.with_negative((*neg).clone(), None);
        }
        out.push(s);
    }
    let bases: HashSet<&str> = out.iter().map(|s| s.base.id.as_str()).collect();
    if let Some(orphan) = negatives.keys().find(|b| !bases.contains(*b)) {
        return Err(Error::InvalidCaptions(format!("hard negative of missing record `{orphan}`")));
    }
    Ok(out)
}

/// Temperature of the softmax over similarities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    temperature: f64,
}

impl SimilarityConfig {
    pub fn new(temperature: f64) -> Result<Self> {
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::invalid(format!("temperature must be positive and finite, got {temperature}")));
        }
        Ok(SimilarityConfig { temperature })
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig { temperature: 0.07 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fox() -> Vec<CaptionRecord> {
        vec![
            CaptionRecord::new("a", "a red fox", "fox").with_axis("color"),
            CaptionRecord::new("a-", "a blue fox", "fox").with_axis("color").hard_negative_of("a"),
            CaptionRecord::new("b", "a dog at noon", "dog").with_axis("lighting"),
        ]
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        write_captions(&path, &fox()).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(r#"{"id":"a","text":"a red fox","concept":"fox","axis":"color","hn_of":null}"#));
        assert_eq!(read_captions(&path).unwrap(), fox());
    }

    #[test]
    fn missing_optional_fields_default_to_none() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        fs::write(&path, "{\"id\":\"x\",\"text\":\"t\",\"concept\":\"c\"}\n\n").unwrap();
        let recs = read_captions(&path).unwrap();
        assert_eq!(recs, vec![CaptionRecord::new("x", "t", "c")]);
    }

    #[test]
    fn bad_json_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        fs::write(&path, "{\"id\":\"x\",\"text\":\"t\",\"concept\":\"c\"}\n{oops\n").unwrap();
        match read_captions(&path) {
            Err(Error::Json { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn validation_catches_dangling_and_chained_negatives() {
        let axes = AxisSet::default();
        validate_captions(&fox(), &axes).unwrap();

        let mut recs = fox();
        recs[1].hn_of = Some("zzz".into());
        assert!(validate_captions(&recs, &axes).is_err());

        let mut recs = fox();
        recs.push(CaptionRecord::new("a--", "x", "fox").hard_negative_of("a-"));
        assert!(validate_captions(&recs, &axes).is_err());

        let mut recs = fox();
        recs[2].axis = Some("texture".into());
        assert!(validate_captions(&recs, &axes).is_err());
    }

    #[test]
    fn default_axes_exclude_pruned_ones() {
        let axes = AxisSet::default();
        assert_eq!(axes.len(), 8);
        assert!(!axes.contains("texture"));
        assert!(!axes.contains("size"));
        assert!(axes.contains(CONCEPT_AXIS));
        assert!(AxisSet::for_hard_negatives(["color"]).is_err());
        assert!(AxisSet::new(Vec::<String>::new()).is_err());
    }

    #[test]
    fn pairing_assigns_contiguous_rows() {
        let samples = pair_captions(&fox(), 2).unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(samples[0].positives, vec![0, 1]);
        assert_eq!(samples[0].hn_id(), Some("a-"));
        assert_eq!(samples[1].positives, vec![2, 3]);
        assert!(samples[1].negative.is_none());
        for s in &samples {
            s.validate(4, false).unwrap();
        }
        assert!(samples[1].validate(3, false).is_err());
    }

    #[test]
    fn sample_requires_negative_images_together() {
        let recs = fox();
        let s = PairedSample::new(recs[0].clone(), vec![0]).with_negative(recs[1].clone(), None);
        assert!(s.validate(2, true).is_err());
        s.validate(2, false).unwrap();
        let s = s.with_negative(recs[1].clone(), Some(vec![1]));
        s.validate(2, true).unwrap();
        assert!(PairedSample::new(recs[0].clone(), vec![]).validate(2, false).is_err());
    }

    #[test]
    fn temperature_must_be_positive() {
        assert!(SimilarityConfig::new(0.0).is_err());
        assert!(SimilarityConfig::new(f64::NAN).is_err());
        assert!(SimilarityConfig::new(-1.0).is_err());
        assert_eq!(SimilarityConfig::new(0.5).unwrap().temperature(), 0.5);
    }
}

//! Samples, splits and the line-delimited record container.
//!
//! Every file the toolkit reads or writes (datasets, reports, training logs,
//! prediction files) is UTF-8 with one JSON object per line. Image bytes are
//! never embedded; samples reference them by relative path.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
    #[serde(default)]
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, String>,
}

impl Sample {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Sample {
            id: id.into(),
            image_path: None,
            text: text.into(),
            label: None,
            target: None,
            explanation: None,
            extra: BTreeMap::new(),
        }
    }

    pub fn with_label(mut self, label: u8) -> Self {
        self.label = Some(label);
        self
    }

    pub fn with_gold(mut self, target: impl Into<String>, explanation: impl Into<String>) -> Self {
        self.target = Some(target.into());
        self.explanation = Some(explanation.into());
        self
    }

    pub fn with_image(mut self, path: impl Into<String>) -> Self {
        self.image_path = Some(path.into());
        self
    }

    pub fn is_sarcastic(&self) -> Option<bool> {
        self.label.map(|l| l == 1)
    }

    /// Parses a decimal value stored under `key` in `extra`.
    pub fn extra_f64(&self, key: &str) -> Option<f64> {
        self.extra.get(key).and_then(|v| v.trim().parse().ok())
    }

    /// Checks the gold fields a demonstration needs to be rendered.
    pub fn check_demonstration(&self) -> Result<()> {
        match self.label {
            None => Err(Error::IncompleteDemonstration {
                id: self.id.clone(),
                field: "label",
            }),
            Some(1) if self.target.is_none() => Err(Error::IncompleteDemonstration {
                id: self.id.clone(),
                field: "target",
            }),
            Some(1) if self.explanation.is_none() => Err(Error::IncompleteDemonstration {
                id: self.id.clone(),
                field: "explanation",
            }),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl SplitName {
    /// Guesses the split from a file name, defaulting to `Train`.
    pub fn from_path(path: &Path) -> Self {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().to_lowercase())
            .unwrap_or_default();
        if stem.contains("test") {
            SplitName::Test
        } else if stem.contains("val") || stem.contains("dev") {
            SplitName::Validation
        } else {
            SplitName::Train
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub name: SplitName,
    pub samples: Vec<Sample>,
}

impl DatasetSplit {
    pub fn new(name: SplitName, samples: Vec<Sample>) -> Self {
        DatasetSplit { name, samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn index(&self) -> BTreeMap<&str, &Sample> {
        self.samples.iter().map(|s| (s.id.as_str(), s)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitStats {
    pub positive: usize,
    pub negative: usize,
    pub unlabeled: usize,
    pub total: usize,
}

pub fn split_stats(split: &DatasetSplit) -> SplitStats {
    let mut stats = SplitStats::default();
    for sample in &split.samples {
        match sample.label {
            Some(1) => stats.positive += 1,
            Some(_) => stats.negative += 1,
            None => stats.unlabeled += 1,
        }
    }
    stats.total = split.samples.len();
    stats
}

/// A model answer after structured-output parsing.
///
/// Only [`crate::parse::parse_structured_output`] builds these, so a
/// non-sarcastic verdict always carries empty target and explanation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParsedResponse {
    pub(crate) is_sarcastic: bool,
    pub(crate) target: String,
    pub(crate) explanation: String,
    pub(crate) raw: String,
}

impl ParsedResponse {
    pub fn is_sarcastic(&self) -> bool {
        self.is_sarcastic
    }

    pub fn label(&self) -> u8 {
        u8::from(self.is_sarcastic)
    }

    pub fn target(&self) -> &str {
        &self.target
    }

    pub fn explanation(&self) -> &str {
        &self.explanation
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }
}

/// One raw backend answer keyed by sample id, as stored in prediction files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub id: String,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<String>,
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<DatasetSplit> {
    let path = path.as_ref();
    let samples: Vec<(usize, Sample)> = read_records_with_lines(path)?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(samples.len());
    for (line, sample) in samples {
        if sample.id.is_empty() {
            return Err(malformed(path, line, "id", "must be non-empty"));
        }
        if let Some(label) = sample.label {
            if label > 1 {
                return Err(malformed(path, line, "label", "must be 0 or 1"));
            }
        }
        if !seen.insert(sample.id.clone()) {
            return Err(Error::DuplicateId {
                path: path.to_path_buf(),
                line,
                id: sample.id,
            });
        }
        out.push(sample);
    }
    Ok(DatasetSplit::new(SplitName::from_path(path), out))
}

pub fn save_dataset(split: &DatasetSplit, path: impl AsRef<Path>) -> Result<()> {
    write_records(path, &split.samples)
}

fn malformed(path: &Path, line: usize, field: &str, message: &str) -> Error {
    Error::MalformedRecord {
        path: path.to_path_buf(),
        line,
        field: field.to_string(),
        message: message.to_string(),
    }
}

/// Reads every non-blank line of a container file as a `T`.
pub fn read_records<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    Ok(read_records_with_lines(path.as_ref())?
        .into_iter()
        .map(|(_, r)| r)
        .collect())
}

fn read_records_with_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let de = &mut serde_json::Deserializer::from_str(&line);
        let record = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            Error::MalformedRecord {
                path: path.to_path_buf(),
                line: line_no,
                field: if field == "." {
                    "<record>".into()
                } else {
                    field
                },
                message: e.into_inner().to_string(),
            }
        })?;
        out.push((line_no, record));
    }
    Ok(out)
}

pub fn write_records<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for record in records {
        write_record(&mut w, record).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn write_record<W: Write, T: Serialize>(w: &mut W, record: &T) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, record)?;
    w.write_all(b"\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn empty_file_gives_empty_split() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "train.jsonl", "");
        let split = load_dataset(&p).unwrap();
        assert!(split.is_empty());
        assert_eq!(split.name, SplitName::Train);
    }

    #[test]
    fn keeps_file_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "test.jsonl",
            "{\"id\":\"c\",\"text\":\"x\"}\n{\"id\":\"a\",\"text\":\"y\",\"label\":0}\n{\"id\":\"b\",\"text\":\"\",\"label\":1,\"target\":\"t\",\"explanation\":\"e\"}\n",
        );
        let split = load_dataset(&p).unwrap();
        let ids: Vec<_> = split.samples.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["c", "a", "b"]);
        assert_eq!(split.name, SplitName::Test);
    }

    #[test]
    fn duplicate_id_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d.jsonl", "{\"id\":\"a\"}\n{\"id\":\"a\"}\n");
        match load_dataset(&p) {
            Err(Error::DuplicateId { line, id, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(id, "a");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_reports_line_and_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "d.jsonl",
            "{\"id\":\"a\"}\n{\"id\":\"b\",\"label\":\"yes\"}\n",
        );
        match load_dataset(&p) {
            Err(Error::MalformedRecord { line, field, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(field, "label");
            }
            other => panic!("unexpected {other:?}"),
        }
        let p = write(&dir, "e.jsonl", "{\"id\":\"a\",\"label\":3}\n");
        assert!(matches!(
            load_dataset(&p),
            Err(Error::MalformedRecord { line: 1, .. })
        ));
        let p = write(&dir, "f.jsonl", "not json\n");
        assert!(matches!(
            load_dataset(&p),
            Err(Error::MalformedRecord { line: 1, .. })
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_dataset("/nonexistent/definitely/missing.jsonl"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn save_empty_split_writes_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.jsonl");
        save_dataset(&DatasetSplit::new(SplitName::Train, vec![]), &p).unwrap();
        assert_eq!(std::fs::read(&p).unwrap().len(), 0);
    }

    #[test]
    fn multiline_explanation_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.jsonl");
        let split = DatasetSplit::new(
            SplitName::Train,
            vec![
                Sample::new("1", "第一行\n第二行")
                    .with_label(1)
                    .with_gold("t", "a\nb\r\nc"),
                Sample::new("2", "").with_label(0),
                Sample::new("3", "q").with_image("img/3.png"),
            ],
        );
        save_dataset(&split, &p).unwrap();
        let body = std::fs::read_to_string(&p).unwrap();
        assert_eq!(body.lines().count(), 3);
        assert_eq!(load_dataset(&p).unwrap(), split);
    }

    #[test]
    fn stats() {
        let mut samples = Vec::new();
        for i in 0..5 {
            samples.push(Sample::new(format!("{i}"), ""));
        }
        let split = DatasetSplit::new(SplitName::Test, samples);
        assert_eq!(
            split_stats(&split),
            SplitStats {
                positive: 0,
                negative: 0,
                unlabeled: 5,
                total: 5
            }
        );
        assert_eq!(
            split_stats(&DatasetSplit::new(SplitName::Test, vec![])),
            SplitStats::default()
        );
    }

    #[test]
    fn demonstration_requirements() {
        assert!(Sample::new("a", "")
            .with_label(0)
            .check_demonstration()
            .is_ok());
        assert!(Sample::new("a", "").check_demonstration().is_err());
        assert!(Sample::new("a", "")
            .with_label(1)
            .check_demonstration()
            .is_err());
        assert!(Sample::new("a", "")
            .with_label(1)
            .with_gold("t", "e")
            .check_demonstration()
            .is_ok());
    }

    #[test]
    fn extra_decimal() {
        let mut s = Sample::new("a", "");
        s.extra.insert("watermark_area".into(), " 0.25".into());
        assert_eq!(s.extra_f64("watermark_area"), Some(0.25));
        assert_eq!(s.extra_f64("missing"), None);
    }
}

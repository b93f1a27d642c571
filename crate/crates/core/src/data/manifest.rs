//! Dataset manifests.
//!
//! ```text
//! # classes: normal,pneumonia
//! path,class,split
//! images/0001.png,normal,train
//! ```
//!
//! The leading `# classes:` line is mandatory and fixes label indices in the
//! order listed. Paths are relative to the manifest's directory.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CLASSES_PREFIX: &str = "# classes:";
const HEADER: [&str; 3] = ["path", "class", "split"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Validation(format!("unknown split tag {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    /// Path exactly as written in the manifest.
    pub path: String,
    pub class: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub classes: Vec<String>,
    pub records: Vec<Record>,
    /// Directory that relative record paths resolve against.
    pub root: PathBuf,
}

/// Record counts per split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Valid => self.valid,
            Split::Test => self.test,
        }
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(&text, path, root)
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, message: message.into() }
}

/// Parses manifest text. `origin` only labels errors.
pub fn parse_manifest(text: &str, origin: &Path, root: PathBuf) -> Result<DatasetManifest> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    let classes_line = first
        .trim_end_matches('\r')
        .strip_prefix(CLASSES_PREFIX)
        .ok_or_else(|| parse_err(origin, 1, format!("first line must start with {CLASSES_PREFIX:?}")))?;
    let classes: Vec<String> = classes_line.split(',').map(|c| c.trim().to_string()).collect();
    if classes.iter().any(String::is_empty) {
        return Err(parse_err(origin, 1, "empty class name"));
    }
    let mut seen = HashSet::new();
    if let Some(dup) = classes.iter().find(|c| !seen.insert(c.as_str())) {
        return Err(parse_err(origin, 1, format!("class {dup:?} listed twice")));
    }

    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(rest.as_bytes());
    let header = reader.headers().map_err(|e| parse_err(origin, 2, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(parse_err(origin, 2, format!("header must be {:?}", HEADER.join(","))));
    }

    let mut records = Vec::new();
    let mut paths = HashSet::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() + 1);
            parse_err(origin, line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line() + 1);
        let (path, class, split) = (&row[0], &row[1], &row[2]);
        if path.is_empty() {
            return Err(parse_err(origin, line, "empty path"));
        }
        let class = classes
            .iter()
            .position(|c| c == class)
            .ok_or_else(|| Error::Validation(format!("record {path:?} (line {line}): unknown class {class:?}")))?;
        let split: Split = split
            .parse()
            .map_err(|_| Error::Validation(format!("record {path:?} (line {line}): unknown split tag {split:?}")))?;
        if !paths.insert(path.to_string()) {
            return Err(Error::Validation(format!("duplicate path {path:?} (line {line})")));
        }
        records.push(Record { path: path.to_string(), class, split });
    }

    let manifest = DatasetManifest { classes, records, root };
    let counts = manifest.split_counts();
    for split in [Split::Train, Split::Test] {
        if counts.get(split) == 0 {
            return Err(Error::Validation(format!("split {split} has no records")));
        }
    }
    Ok(manifest)
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn split_counts(&self) -> SplitCounts {
        let mut c = SplitCounts::default();
        for r in &self.records {
            match r.split {
                Split::Train => c.train += 1,
                Split::Valid => c.valid += 1,
                Split::Test => c.test += 1,
            }
        }
        c
    }

    pub fn records_in(&self, split: Split) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn class_counts(&self, split: Split) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for r in self.records_in(split) {
            counts[r.class] += 1;
        }
        counts
    }

    pub fn resolve(&self, record: &Record) -> PathBuf {
        self.root.join(&record.path)
    }

    /// Serialized manifest text.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{CLASSES_PREFIX} {}\n{}\n", self.classes.join(","), HEADER.join(","));
        for r in &self.records {
            out.push_str(&format!("{},{},{}\n", r.path, self.classes[r.class], r.split));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<DatasetManifest> {
        parse_manifest(text, Path::new("m.csv"), PathBuf::from("/data"))
    }

    #[test]
    fn three_records() {
        let m =
            parse("# classes: cat,dog\npath,class,split\na.png,cat,train\nb.png,dog,test\nc.png,dog,valid\n").unwrap();
        assert_eq!(m.records.len(), 3);
        assert_eq!(m.classes, vec!["cat", "dog"]);
        assert_eq!(m.records[1].class, 1);
        assert_eq!(m.split_counts(), SplitCounts { train: 1, valid: 1, test: 1 });
        assert_eq!(m.resolve(&m.records[0]), PathBuf::from("/data/a.png"));
    }

    #[test]
    fn class_order_comes_from_comment_line() {
        let m = parse("# classes: zeta,alpha\npath,class,split\na,alpha,train\nb,zeta,test\n").unwrap();
        assert_eq!(m.records[0].class, 1);
        assert_eq!(m.records[1].class, 0);
    }

    #[test]
    fn duplicate_path_named() {
        let err = parse("# classes: a\npath,class,split\nx.png,a,train\nx.png,a,test\n").unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("x.png"));
    }

    #[test]
    fn unknown_split_and_class_rejected() {
        let err = parse("# classes: a\npath,class,split\nx.png,a,holdout\n").unwrap_err();
        assert!(err.to_string().contains("holdout"));
        let err = parse("# classes: a\npath,class,split\nx.png,b,train\n").unwrap_err();
        assert!(err.to_string().contains("x.png"));
    }

    #[test]
    fn missing_class_line_is_parse_error() {
        let err = parse("path,class,split\nx.png,a,train\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn ragged_row_reports_line() {
        let err = parse("# classes: a\npath,class,split\nx.png,a,train\ny.png,a\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_train_or_test_rejected() {
        assert!(parse("# classes: a\npath,class,split\nx.png,a,train\n").is_err());
        assert!(parse("# classes: a\npath,class,split\nx.png,a,test\n").is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let text = "# classes: a,b\npath,class,split\nx.png,b,train\ny.png,a,test\n";
        let m = parse(text).unwrap();
        assert_eq!(m.to_csv(), text);
    }
}

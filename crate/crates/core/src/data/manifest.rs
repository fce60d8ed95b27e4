//! CSV manifests: `path,split,<class1>,<class2>,...` with 0/1 label cells.
//! Relative image paths are resolved against the manifest's directory.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!(
                "unknown split {other:?} (expected train, val or test)"
            ))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Path as written in the manifest.
    pub path: String,
    pub split: Split,
    /// Multi-hot labels in manifest class order.
    pub labels: Vec<u8>,
}

impl ManifestEntry {
    pub fn is_positive(&self, class: usize) -> bool {
        self.labels[class] == 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub classes: Vec<String>,
    pub entries: Vec<ManifestEntry>,
    /// Directory used to resolve relative entry paths.
    pub root: PathBuf,
}

impl Manifest {
    pub fn new(classes: Vec<String>, root: impl Into<PathBuf>) -> Self {
        Self {
            classes,
            entries: Vec::new(),
            root: root.into(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)
            .map_err(|e| Error::io(format!("opening manifest {}", path.display()), e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(file, path, root)
    }

    /// Parses manifest text; `origin` is only used in error messages.
    pub fn parse(reader: impl std::io::Read, origin: &Path, root: PathBuf) -> Result<Self> {
        let err = |line: usize, message: String| Error::Manifest {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr.headers().map_err(|e| err(1, e.to_string()))?.clone();
        if header.len() < 3 || &header[0] != "path" || &header[1] != "split" {
            return Err(err(1, "header must be path,split,<class>,...".into()));
        }
        let classes: Vec<String> = header.iter().skip(2).map(str::to_owned).collect();
        let mut seen_classes = HashSet::new();
        for c in &classes {
            if c.is_empty() || !seen_classes.insert(c.as_str()) {
                return Err(err(1, format!("class name {c:?} is empty or repeated")));
            }
        }

        let mut entries = Vec::new();
        let mut seen_paths = HashSet::new();
        for (i, record) in rdr.records().enumerate() {
            let line = i + 2;
            let record = record.map_err(|e| err(line, e.to_string()))?;
            if record.len() != header.len() {
                return Err(err(
                    line,
                    format!("{} fields, header has {}", record.len(), header.len()),
                ));
            }
            let path = record[0].to_owned();
            if path.is_empty() {
                return Err(err(line, "empty path".into()));
            }
            if !seen_paths.insert(path.clone()) {
                return Err(err(line, format!("duplicate path {path}")));
            }
            let split: Split = record[1].parse().map_err(|e: Error| err(line, e.to_string()))?;
            let labels = record
                .iter()
                .skip(2)
                .zip(&classes)
                .map(|(cell, class)| match cell {
                    "0" => Ok(0),
                    "1" => Ok(1),
                    other => Err(err(line, format!("label {other:?} for {class} is not 0 or 1"))),
                })
                .collect::<Result<Vec<u8>>>()?;
            entries.push(ManifestEntry {
                path,
                split,
                labels,
            });
        }
        Ok(Self {
            classes,
            entries,
            root,
        })
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["path".to_owned(), "split".to_owned()];
        header.extend(self.classes.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for e in &self.entries {
            let mut row = vec![e.path.clone(), e.split.to_string()];
            row.extend(e.labels.iter().map(u8::to_string));
            w.write_record(&row).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("manifest CSV is UTF-8"))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()?)
            .map_err(|e| Error::io(format!("writing manifest {}", path.display()), e))
    }

    /// Fails unless the header declares exactly `expected`, in order.
    pub fn check_classes(&self, expected: &[String]) -> Result<()> {
        if let Some(unknown) = self.classes.iter().find(|c| !expected.contains(c)) {
            return Err(Error::Data(format!(
                "manifest class {unknown:?} is not among the configured classes {expected:?}"
            )));
        }
        if self.classes != expected {
            return Err(Error::Data(format!(
                "manifest classes {:?} do not match configured classes {expected:?}",
                self.classes
            )));
        }
        Ok(())
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        let p = Path::new(&entry.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// A manifest restricted to one split.
    pub fn split(&self, split: Split) -> Self {
        Self {
            classes: self.classes.clone(),
            entries: self
                .entries
                .iter()
                .filter(|e| e.split == split)
                .cloned()
                .collect(),
            root: self.root.clone(),
        }
    }

    /// Positive count per class.
    pub fn positives(&self) -> Vec<usize> {
        (0..self.classes.len())
            .map(|c| self.entries.iter().filter(|e| e.is_positive(c)).count())
            .collect()
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Data(format!("CSV: {e}"))
}

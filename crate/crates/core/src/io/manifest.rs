//! CSV dataset manifests with header `path,label,split`. Paths are relative
//! to the manifest's directory.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub path: PathBuf,
    pub label: String,
    pub split: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    root: PathBuf,
    rows: Vec<ManifestRow>,
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    DatasetManifest::parse(&text, root, path)
}

impl DatasetManifest {
    /// Parses manifest bytes; `source` only labels error messages.
    pub fn parse(bytes: &[u8], root: PathBuf, source: &Path) -> Result<Self> {
        let err = |reason: String| Error::Manifest {
            path: source.to_path_buf(),
            reason,
        };
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(bytes);
        let headers = reader
            .headers()
            .map_err(|e| err(format!("malformed CSV header: {e}")))?
            .clone();
        let mut idx = [None; 3];
        for (i, h) in headers.iter().enumerate() {
            let slot = match h {
                "path" => 0,
                "label" => 1,
                "split" => 2,
                other => return Err(err(format!("unknown column {other:?}"))),
            };
            if idx[slot].replace(i).is_some() {
                return Err(err(format!("column {h:?} appears twice")));
            }
        }
        let [Some(pi), Some(li), Some(si)] = idx else {
            return Err(err(
                "header must contain the columns path, label, split".into()
            ));
        };

        let mut seen = HashSet::new();
        let mut rows = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| err(format!("malformed CSV: {e}")))?;
            let row_no = line + 2;
            let path = &record[pi];
            let label = &record[li];
            let split = &record[si];
            if path.is_empty() || label.is_empty() || split.is_empty() {
                return Err(err(format!(
                    "row {row_no}: path, label and split must be nonempty"
                )));
            }
            if !seen.insert(path.to_string()) {
                return Err(err(format!("duplicate path {path:?} at row {row_no}")));
            }
            rows.push(ManifestRow {
                path: PathBuf::from(path),
                label: label.to_string(),
                split: split.to_string(),
            });
        }
        Ok(Self { root, rows })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn rows(&self) -> &[ManifestRow] {
        &self.rows
    }

    /// Absolute (root-joined) location of a row's image.
    pub fn resolve(&self, row: &ManifestRow) -> PathBuf {
        self.root.join(&row.path)
    }

    /// Rows of one split, in file order.
    pub fn split(&self, name: &str) -> Vec<&ManifestRow> {
        self.rows.iter().filter(|r| r.split == name).collect()
    }

    pub fn split_names(&self) -> BTreeSet<&str> {
        self.rows.iter().map(|r| r.split.as_str()).collect()
    }

    pub fn labels(&self) -> BTreeSet<&str> {
        self.rows.iter().map(|r| r.label.as_str()).collect()
    }
}

//! Dataset manifests: a CSV listing of tensor files with class labels,
//! base/novel split assignment, and optional ground-truth sub-cluster ids.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use crate::data::tensor_file::read_tensor_file;
use crate::error::{Result, ScanError};
use crate::tensor::Tensor;

pub const MANIFEST_HEADER: [&str; 4] = ["path", "class_label", "split", "subcluster_id"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Base,
    Novel,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Base => "base",
            Split::Novel => "novel",
        }
    }

    pub fn parse(s: &str) -> Result<Split> {
        match s {
            "base" => Ok(Split::Base),
            "novel" => Ok(Split::Novel),
            other => Err(ScanError::data(format!("unknown split '{other}' (expected base|novel)"))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    /// Tensor file path, relative to the manifest's directory.
    pub path: String,
    pub class_label: String,
    pub split: Split,
    /// Ground-truth sub-cluster id; synthetic data only, never used in
    /// training.
    pub subcluster_id: Option<u32>,
}

/// Writes records as CSV with the canonical header.
pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    writer.write_record(MANIFEST_HEADER).map_err(|e| csv_err(path, e))?;
    for r in records {
        let sub = r.subcluster_id.map(|s| s.to_string()).unwrap_or_default();
        writer
            .write_record([r.path.as_str(), r.class_label.as_str(), r.split.as_str(), sub.as_str()])
            .map_err(|e| csv_err(path, e))?;
    }
    writer.flush().map_err(|e| ScanError::io(path, e))?;
    Ok(())
}

fn csv_err(path: &Path, e: csv::Error) -> ScanError {
    ScanError::data(format!("{}: {e}", path.display()))
}

/// Reads and validates a manifest: exact header, known splits, disjoint
/// base/novel class-label sets, no duplicate paths.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let headers = reader.headers().map_err(|e| csv_err(path, e))?;
    let got: Vec<&str> = headers.iter().collect();
    if got != MANIFEST_HEADER {
        return Err(ScanError::data(format!(
            "{}: manifest header must be exactly `{}`, got `{}`",
            path.display(),
            MANIFEST_HEADER.join(","),
            got.join(",")
        )));
    }
    let mut records = Vec::new();
    let mut seen_paths: HashMap<String, usize> = HashMap::new();
    let mut base_labels = BTreeSet::new();
    let mut novel_labels = BTreeSet::new();
    for (idx, row) in reader.records().enumerate() {
        let row = row.map_err(|e| csv_err(path, e))?;
        if row.len() != 4 {
            return Err(ScanError::data(format!(
                "{}: record {idx} has {} fields, expected 4",
                path.display(),
                row.len()
            )));
        }
        let rec_path = row[0].to_string();
        if let Some(first) = seen_paths.insert(rec_path.clone(), idx) {
            return Err(ScanError::data(format!(
                "{}: duplicate path '{rec_path}' at records {first} and {idx}",
                path.display()
            )));
        }
        let split = Split::parse(&row[2])?;
        let subcluster_id = if row[3].is_empty() {
            None
        } else {
            Some(row[3].parse::<u32>().map_err(|_| {
                ScanError::data(format!(
                    "{}: record {idx}: subcluster_id '{}' is not a non-negative integer",
                    path.display(),
                    &row[3]
                ))
            })?)
        };
        match split {
            Split::Base => base_labels.insert(row[1].to_string()),
            Split::Novel => novel_labels.insert(row[1].to_string()),
        };
        records.push(ManifestRecord {
            path: rec_path,
            class_label: row[1].to_string(),
            split,
            subcluster_id,
        });
    }
    if let Some(shared) = base_labels.intersection(&novel_labels).next() {
        return Err(ScanError::data(format!(
            "{}: class '{shared}' appears in both base and novel splits; the sets must be disjoint",
            path.display()
        )));
    }
    Ok(records)
}

/// One split loaded into memory: samples stacked along the first axis,
/// string labels densified to contiguous indices in sorted-label order.
#[derive(Debug, Clone)]
pub struct LoadedSplit {
    /// `N x sample_shape...` stack of all samples, manifest order.
    pub data: Tensor,
    /// Densified class index per sample.
    pub class_indices: Vec<usize>,
    /// Sorted unique class labels; `class_indices` index into this.
    pub class_names: Vec<String>,
    /// Ground-truth sub-cluster ids where present.
    pub subcluster_ids: Vec<Option<u32>>,
    /// Original manifest paths, for reporting.
    pub paths: Vec<String>,
}

impl LoadedSplit {
    pub fn len(&self) -> usize {
        self.class_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Per-sample shape (without the leading sample axis).
    pub fn sample_shape(&self) -> &[usize] {
        &self.data.shape()[1..]
    }

    /// One sample as a standalone tensor.
    pub fn sample(&self, i: usize) -> Tensor {
        let shape = self.sample_shape().to_vec();
        let len: usize = shape.iter().product();
        Tensor::from_vec(shape, self.data.data()[i * len..(i + 1) * len].to_vec())
            .expect("sample slice matches shape")
    }

    /// Indices of every sample of class `c`.
    pub fn class_members(&self, c: usize) -> Vec<usize> {
        self.class_indices
            .iter()
            .enumerate()
            .filter(|(_, &y)| y == c)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Loads every record of `split` from a manifest, reading tensor files
/// relative to the manifest's directory. All samples must share one shape.
pub fn load_split(manifest_path: &Path, split: Split) -> Result<LoadedSplit> {
    let records = read_manifest(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let wanted: Vec<&ManifestRecord> = records.iter().filter(|r| r.split == split).collect();
    if wanted.is_empty() {
        return Err(ScanError::data(format!(
            "{}: no records in split '{split}'",
            manifest_path.display()
        )));
    }
    let mut names: Vec<String> = wanted.iter().map(|r| r.class_label.clone()).collect();
    names.sort();
    names.dedup();

    let mut sample_shape: Option<Vec<usize>> = None;
    let mut data: Vec<f64> = Vec::new();
    let mut class_indices = Vec::with_capacity(wanted.len());
    let mut subcluster_ids = Vec::with_capacity(wanted.len());
    let mut paths = Vec::with_capacity(wanted.len());
    for r in &wanted {
        let t = read_tensor_file(&dir.join(&r.path))?;
        match &sample_shape {
            None => sample_shape = Some(t.shape().to_vec()),
            Some(s) => {
                if t.shape() != &s[..] {
                    return Err(ScanError::data(format!(
                        "{}: shape {:?} disagrees with first sample {:?}",
                        r.path,
                        t.shape(),
                        s
                    )));
                }
            }
        }
        data.extend_from_slice(t.data());
        class_indices.push(names.binary_search(&r.class_label).expect("label in sorted set"));
        subcluster_ids.push(r.subcluster_id);
        paths.push(r.path.clone());
    }
    let mut shape = vec![wanted.len()];
    shape.extend(sample_shape.expect("non-empty split"));
    Ok(LoadedSplit {
        data: Tensor::from_vec(shape, data)?,
        class_indices,
        class_names: names,
        subcluster_ids,
        paths,
    })
}

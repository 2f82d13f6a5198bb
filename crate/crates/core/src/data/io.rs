//! On-disk datasets: `manifest.json` plus one headerless CSV per subject.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BrainNetwork, Dataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SubjectEntry {
    pub file: String,
    pub label: u8,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub name: String,
    pub node_count: usize,
    pub modality: String,
    pub subjects: Vec<SubjectEntry>,
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut subjects = Vec::with_capacity(manifest.subjects.len());
    for entry in &manifest.subjects {
        let file = dir.join(&entry.file);
        let raw = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let adjacency = parse_matrix(&raw, manifest.node_count)
            .map_err(|msg| Error::Data(format!("{}: {msg}", file.display())))?;
        let net = BrainNetwork::new(adjacency, entry.label)
            .map_err(|e| Error::Data(format!("{}: {e}", file.display())))?;
        subjects.push(net);
    }
    Dataset::new(manifest.name, manifest.modality, subjects)
}

fn parse_matrix(raw: &str, n: usize) -> std::result::Result<Tensor, String> {
    let mut data = Vec::with_capacity(n * n);
    let mut rows = 0;
    for (lineno, line) in raw.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let before = data.len();
        for field in line.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| format!("line {}: bad number `{field}`", lineno + 1))?;
            data.push(v);
        }
        if data.len() - before != n {
            return Err(format!(
                "line {}: expected {n} values, got {}",
                lineno + 1,
                data.len() - before
            ));
        }
        rows += 1;
    }
    if rows != n {
        return Err(format!("expected {n} rows, got {rows}"));
    }
    Ok(Tensor::matrix(n, n, data))
}

/// Writes `dataset` into `dir` (created if needed). Values are written in
/// shortest round-trip form, so loading reproduces them exactly.
pub fn save_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let width = dataset.len().to_string().len().max(4);
    let mut entries = Vec::with_capacity(dataset.len());
    for (i, s) in dataset.subjects().iter().enumerate() {
        let file = format!("subject_{i:0width$}.csv");
        let mut out = String::new();
        let a = s.adjacency();
        for r in 0..a.rows() {
            for (c, v) in a.row(r).iter().enumerate() {
                if c > 0 {
                    out.push(',');
                }
                write!(out, "{v}").expect("write to string");
            }
            out.push('\n');
        }
        let path = dir.join(&file);
        fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
        entries.push(SubjectEntry {
            file,
            label: s.label(),
        });
    }
    let manifest = Manifest {
        name: dataset.name.clone(),
        node_count: dataset.node_count(),
        modality: dataset.modality.clone(),
        subjects: entries,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

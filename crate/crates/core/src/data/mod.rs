//! Brain networks, datasets and tasks.

mod atlas;
mod io;

use std::sync::Arc;

pub use atlas::{
    autoencoder_forward, linear_project, linear_project_var, mse, train_autoencoder, zero_pad,
    AtlasKind, AtlasTransform, AutoencoderConfig,
};
pub use io::{load_dataset, save_dataset, Manifest, SubjectEntry};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const SYMMETRY_TOL: f64 = 1e-9;

/// One subject: a weighted adjacency matrix and a binary diagnosis label.
#[derive(Clone, Debug, PartialEq)]
pub struct BrainNetwork {
    adjacency: Tensor,
    label: u8,
}

impl BrainNetwork {
    pub fn new(adjacency: Tensor, label: u8) -> Result<Self> {
        if adjacency.rank() != 2 || adjacency.rows() != adjacency.cols() {
            return Err(Error::Data(format!(
                "adjacency must be square, got {:?}",
                adjacency.shape()
            )));
        }
        if label > 1 {
            return Err(Error::Data(format!("label must be 0 or 1, got {label}")));
        }
        if !adjacency.is_finite() {
            return Err(Error::Data("adjacency contains non-finite values".into()));
        }
        let n = adjacency.rows();
        for i in 0..n {
            for j in i + 1..n {
                let (a, b) = (adjacency.get(i, j), adjacency.get(j, i));
                if (a - b).abs() > SYMMETRY_TOL {
                    return Err(Error::Data(format!(
                        "adjacency not symmetric at ({i}, {j}): {a} vs {b}"
                    )));
                }
            }
        }
        Ok(BrainNetwork { adjacency, label })
    }

    pub fn adjacency(&self) -> &Tensor {
        &self.adjacency
    }

    pub fn label(&self) -> u8 {
        self.label
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.rows()
    }

    /// Relabels nodes: node `i` of the result is node `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> BrainNetwork {
        let n = self.node_count();
        assert_eq!(perm.len(), n);
        let mut a = Tensor::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                a.set(i, j, self.adjacency.get(perm[i], perm[j]));
            }
        }
        BrainNetwork {
            adjacency: a,
            label: self.label,
        }
    }
}

/// Node features: row `i` is node `i`'s connection profile, i.e. row `i`
/// of the weighted adjacency matrix.
pub fn connection_profile_features(net: &BrainNetwork) -> Tensor {
    net.adjacency.clone()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub modality: String,
    node_count: usize,
    subjects: Vec<BrainNetwork>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        modality: impl Into<String>,
        subjects: Vec<BrainNetwork>,
    ) -> Result<Self> {
        let name = name.into();
        let Some(first) = subjects.first() else {
            return Err(Error::Data(format!("dataset `{name}` has no subjects")));
        };
        let node_count = first.node_count();
        if let Some(bad) = subjects.iter().position(|s| s.node_count() != node_count) {
            return Err(Error::Data(format!(
                "dataset `{name}`: subject {bad} has {} nodes, expected {node_count}",
                subjects[bad].node_count()
            )));
        }
        let positives = subjects.iter().filter(|s| s.label == 1).count();
        if positives == 0 || positives == subjects.len() {
            return Err(Error::Data(format!(
                "dataset `{name}` needs subjects of both classes"
            )));
        }
        Ok(Dataset {
            name,
            modality: modality.into(),
            node_count,
            subjects,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn subjects(&self) -> &[BrainNetwork] {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.subjects.iter().map(|s| s.label).collect()
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let pos = self.subjects.iter().filter(|s| s.label == 1).count();
        [self.subjects.len() - pos, pos]
    }

    /// `"name/modality"`, the identifier used in result tables.
    pub fn task_name(&self) -> String {
        format!("{}/{}", self.name, self.modality)
    }

    /// Applies `f` to every subject, keeping name and modality.
    pub fn map_subjects(
        &self,
        f: impl Fn(&BrainNetwork) -> Result<BrainNetwork>,
    ) -> Result<Dataset> {
        let subjects = self.subjects.iter().map(f).collect::<Result<Vec<_>>>()?;
        Dataset::new(self.name.clone(), self.modality.clone(), subjects)
    }

    /// Subset by subject index; may be single-class.
    pub fn subset(&self, idx: &[usize]) -> Vec<&BrainNetwork> {
        idx.iter().map(|&i| &self.subjects[i]).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskRole {
    Source,
    Target,
}

/// Prediction of one disease on one view.
#[derive(Clone, Debug)]
pub struct Task {
    pub dataset: Arc<Dataset>,
    pub role: TaskRole,
}

impl Task {
    pub fn source(dataset: Dataset) -> Self {
        Task {
            dataset: Arc::new(dataset),
            role: TaskRole::Source,
        }
    }

    pub fn target(dataset: Dataset) -> Self {
        Task {
            dataset: Arc::new(dataset),
            role: TaskRole::Target,
        }
    }

    pub fn name(&self) -> String {
        self.dataset.task_name()
    }
}

/// Source tasks used together during multi-task pre-training.
#[derive(Clone, Debug, Default)]
pub struct TaskPool {
    pub tasks: Vec<Task>,
}

impl TaskPool {
    pub fn new(tasks: Vec<Task>) -> Self {
        TaskPool { tasks }
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}

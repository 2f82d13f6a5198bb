//! Training strategies: direct supervised learning (DSL), single- and
//! multi-task transfer (STT, MTT), multi-task meta-learning (MML) and
//! meta-learning with generated per-layer hyperparameters (MMAR).

mod meta;
mod schedule;
mod supervised;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use meta::{
    generate_hyperparams, learning_state, meta_gradient, meta_train_mmar, meta_train_mmar_with,
    meta_train_mml, meta_train_mml_with, HyperparamGenerator, MetaConfig, MetaGradient,
    MetaOutcome, MmarOutcome,
};
pub use schedule::{Batch, Schedule};
pub use supervised::{
    finetune, finetune_schedule, predict, pretrain_stt, supervised_gradient, train_dsl, train_mtt,
    train_mtt_with, train_steps, TrainConfig, TrainOutcome, TrainState,
};

use crate::autodiff::{Bindings, Tape, Var};
use crate::data::{
    linear_project_var, train_autoencoder, AtlasKind, AutoencoderConfig, Dataset, TaskPool,
};
use crate::encoders::{EncoderConfig, GraphBatch};
use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::tensor::Tensor;

#[derive(
    Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Dsl,
    Stt,
    Mtt,
    Mml,
    Mmar,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Dsl,
        Strategy::Stt,
        Strategy::Mtt,
        Strategy::Mml,
        Strategy::Mmar,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Strategy::Dsl => "dsl",
            Strategy::Stt => "stt",
            Strategy::Mtt => "mtt",
            Strategy::Mml => "mml",
            Strategy::Mmar => "mmar",
        }
    }

    pub fn needs_sources(self) -> bool {
        self != Strategy::Dsl
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.tag() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Invalid(format!("unknown strategy `{s}`")))
    }
}

/// Deterministic RNG for a named stream of a run.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) mod streams {
    pub const INIT: u64 = 1;
    pub const SCHEDULE: u64 = 2;
    pub const GENERATOR: u64 = 3;
    pub const FOLDS: u64 = 4;
    pub const FINETUNE: u64 = 5;
}

/// Mean binary cross-entropy on logits, `mean(softplus(z) − y·z)`.
pub fn bce_loss<'t>(logits: Var<'t>, labels: &[u8]) -> Result<Var<'t>> {
    let (n, c) = logits.dims();
    if labels.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    if n * c != labels.len() || c != 1 {
        return Err(Error::Shape(format!(
            "{} labels for logits {n}x{c}",
            labels.len()
        )));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::Invalid("labels must be 0 or 1".into()));
    }
    let y = logits.tape().constant(Tensor::matrix(
        n,
        1,
        labels.iter().map(|&y| y as f64).collect(),
    ));
    Ok((logits.softplus() - y * logits).mean())
}

/// Value-level [`bce_loss`].
pub fn bce_value(logits: &[f64], labels: &[u8]) -> Result<f64> {
    let tape = Tape::new();
    let z = tape.constant(Tensor::matrix(logits.len(), 1, logits.to_vec()));
    Ok(bce_loss(z, labels)?.item())
}

/// A training task ready for the encoder: either already at the encoder's
/// node count, or carrying the name of a learned projection to apply first.
#[derive(Clone, Debug)]
pub struct PreparedTask {
    pub dataset: Arc<Dataset>,
    pub projection: Option<String>,
}

impl PreparedTask {
    pub fn direct(dataset: Dataset) -> Self {
        PreparedTask {
            dataset: Arc::new(dataset),
            projection: None,
        }
    }

    pub fn name(&self) -> String {
        self.dataset.task_name()
    }

    /// Encoder input batch for the given subject indices.
    pub fn batch<'t>(&self, tape: &'t Tape, p: &Bindings<'t>, idx: &[usize]) -> GraphBatch<'t> {
        let nets = self.dataset.subset(idx);
        match &self.projection {
            None => GraphBatch::from_networks(tape, &nets),
            Some(key) => {
                let w = p.get(key);
                let parts: Vec<Var<'t>> = nets
                    .iter()
                    .map(|n| linear_project_var(tape.constant(n.adjacency().clone()), w))
                    .collect();
                GraphBatch::concat(&parts)
            }
        }
    }

    /// Mean BCE of the encoder on `idx`.
    pub fn loss<'t>(
        &self,
        enc: &EncoderConfig,
        tape: &'t Tape,
        p: &Bindings<'t>,
        idx: &[usize],
    ) -> Result<Var<'t>> {
        let batch = self.batch(tape, p, idx);
        let labels: Vec<u8> = idx
            .iter()
            .map(|&i| self.dataset.subjects()[i].label())
            .collect();
        bce_loss(enc.logits(p, &batch), &labels)
    }
}

/// Source tasks aligned to the encoder's node count.
#[derive(Clone, Debug)]
pub struct SourcePool {
    pub tasks: Vec<PreparedTask>,
    pub target_dim: usize,
    /// Learned projections `(name, source node count)`.
    pub projections: Vec<(String, usize)>,
}

impl SourcePool {
    /// Sources that already share the encoder's node count.
    pub fn direct(datasets: Vec<Dataset>) -> Result<Self> {
        let target_dim = datasets
            .first()
            .ok_or_else(|| Error::Invalid("empty source pool".into()))?
            .node_count();
        if let Some(d) = datasets.iter().find(|d| d.node_count() != target_dim) {
            return Err(Error::Shape(format!(
                "source `{}` has {} nodes, expected {target_dim}",
                d.name,
                d.node_count()
            )));
        }
        Ok(SourcePool {
            tasks: datasets.into_iter().map(PreparedTask::direct).collect(),
            target_dim,
            projections: vec![],
        })
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Single-task pool (for STT).
    pub fn single(&self, i: usize) -> SourcePool {
        let task = self.tasks[i].clone();
        let projections = self
            .projections
            .iter()
            .filter(|(n, _)| task.projection.as_deref() == Some(n.as_str()))
            .cloned()
            .collect();
        SourcePool {
            tasks: vec![task],
            target_dim: self.target_dim,
            projections,
        }
    }

    /// Random encoder initialisation followed by the projection matrices,
    /// each in its own layer. Projections start as the zero-padding map.
    pub fn init_params(&self, enc: &EncoderConfig, rng: &mut ChaCha8Rng) -> Result<ParameterSet> {
        let mut p = enc.init(self.target_dim, rng)?;
        let mut layer = p.layer_count();
        for (name, n) in &self.projections {
            let mut w = Tensor::zeros(*n, self.target_dim);
            for i in 0..(*n).min(self.target_dim) {
                w.set(i, i, 1.0);
            }
            p.push(name.clone(), w, layer)?;
            layer += 1;
        }
        Ok(p)
    }
}

pub fn projection_name(source_dim: usize) -> String {
    format!("proj_{source_dim}")
}

/// Encoder parameters only (drops learned projections).
pub fn encoder_params(p: &ParameterSet) -> ParameterSet {
    let names: Vec<&str> = p.names().filter(|n| !n.starts_with("proj_")).collect();
    p.sub_set(&names).expect("names come from the set")
}

/// Aligns every source task to `target_dim` nodes with the chosen atlas scheme.
/// Autoencoders are trained per source dataset; projections are left for
/// joint training.
pub fn prepare_sources(
    pool: &TaskPool,
    target_dim: usize,
    atlas: AtlasKind,
    ae: &AutoencoderConfig,
) -> Result<SourcePool> {
    if pool.is_empty() {
        return Err(Error::Invalid("empty source pool".into()));
    }
    let mut tasks = Vec::with_capacity(pool.len());
    let mut projections: Vec<(String, usize)> = Vec::new();
    for task in &pool.tasks {
        let ds = &task.dataset;
        let n = ds.node_count();
        let prepared = match atlas {
            AtlasKind::ZeroPad if n == target_dim => PreparedTask {
                dataset: Arc::clone(ds),
                projection: None,
            },
            AtlasKind::ZeroPad => {
                let t = crate::data::AtlasTransform::zero_pad(n, target_dim)?;
                PreparedTask::direct(t.apply_dataset(ds)?)
            }
            AtlasKind::LinearProjection => {
                let name = projection_name(n);
                if !projections.iter().any(|(p, _)| *p == name) {
                    projections.push((name.clone(), n));
                }
                PreparedTask {
                    dataset: Arc::clone(ds),
                    projection: Some(name),
                }
            }
            AtlasKind::Autoencoder => {
                let cfg = AutoencoderConfig {
                    target_dim,
                    ..ae.clone()
                };
                let (t, _) = train_autoencoder(&[ds.as_ref()], &cfg)?;
                PreparedTask::direct(t.apply_dataset(ds)?)
            }
        };
        tasks.push(prepared);
    }
    Ok(SourcePool {
        tasks,
        target_dim,
        projections,
    })
}

/// Adds `b` into `acc` entrywise.
pub(crate) fn accumulate(acc: &mut ParameterSet, b: &ParameterSet) {
    for (x, y) in acc.iter_mut().zip(b.iter()) {
        for (u, v) in x.tensor.data_mut().iter_mut().zip(y.tensor.data()) {
            *u += v;
        }
    }
}

//! Data-efficient graph classification for small multi-modality brain
//! network datasets.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] and [`autodiff`]: dense `f64` matrices and a recording tape
//!   whose backward pass can itself be differentiated.
//! * [`data`]: brain networks, datasets on disk and atlas transforms that
//!   align node dimensions across datasets.
//! * [`encoders`]: GCN, GAT and BrainNetCNN graph encoders with a shared
//!   classifier head.
//! * [`optim`]: SGD, Adam with decoupled weight decay and cosine annealing.
//! * [`strategies`]: direct supervised learning, single- and multi-task
//!   transfer, second-order MAML and MAML with a learned per-layer
//!   hyperparameter generator.
//! * [`eval`]: ACC/AUC, stratified folds, paired t-tests and Fisher
//!   task embeddings.
//! * [`synth`]: a deterministic generator of block-structured multi-view
//!   datasets with a plantable shared signal.
//! * [`checkpoint`] and [`experiment`]: binary checkpoints and a
//!   reproducible experiment runner used by the `bnmc` CLI.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod optim;
pub mod parallel;
pub mod params;
pub mod strategies;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use params::ParameterSet;
pub use tensor::Tensor;

//! Graph encoders mapping a brain network to a classification logit.
//!
//! All encoders consume a [`GraphBatch`]: `B` graphs of `M` nodes stacked
//! vertically into `[B·M, M]` adjacency and `[B·M, F]` feature matrices.
//! Every encoder ends in the same classifier head
//! (affine → ReLU → affine to a scalar logit); the sigmoid is applied only
//! inside the loss.

mod brainnetcnn;
mod gat;
mod gcn;

use rand::Rng;

pub use brainnetcnn::e2e;
pub use gcn::normalized_adjacency;

use crate::autodiff::{Axis, Bindings, Tape, Var};
use crate::data::{connection_profile_features, BrainNetwork};
use crate::error::{Error, Result};
use crate::params::{glorot, ParameterSet};
use crate::tensor::Tensor;

/// Negative slope of BrainNetCNN's leaky ReLU.
pub const BRAINNETCNN_LEAK: f64 = 0.33;
/// Negative slope inside GAT attention logits.
pub const GAT_ATTENTION_LEAK: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Gcn,
    Gat,
    BrainNetCnn,
}

impl EncoderKind {
    pub fn tag(self) -> &'static str {
        match self {
            EncoderKind::Gcn => "gcn",
            EncoderKind::Gat => "gat",
            EncoderKind::BrainNetCnn => "brainnetcnn",
        }
    }
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(EncoderKind::Gcn),
            "gat" => Ok(EncoderKind::Gat),
            "brainnetcnn" | "bnc" => Ok(EncoderKind::BrainNetCnn),
            other => Err(Error::Invalid(format!("unknown encoder `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    /// Layer widths. For BrainNetCNN: `[E2E channels, E2N features, N2G outputs]`.
    pub hidden_dims: Vec<usize>,
    pub head_hidden: usize,
    /// Adds a learned per-layer multiple of the edge weight to GAT attention logits.
    pub gat_edge_bias: bool,
}

impl EncoderConfig {
    pub fn new(kind: EncoderKind) -> Self {
        let hidden_dims = match kind {
            EncoderKind::Gcn | EncoderKind::Gat => vec![32, 32, 32, 8],
            EncoderKind::BrainNetCnn => vec![8, 32, 8],
        };
        EncoderConfig {
            kind,
            hidden_dims,
            head_hidden: 8,
            gat_edge_bias: false,
        }
    }

    pub fn with_hidden(mut self, dims: &[usize]) -> Self {
        self.hidden_dims = dims.to_vec();
        self
    }

    pub fn with_head_hidden(mut self, h: usize) -> Self {
        self.head_hidden = h;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) || self.head_hidden == 0 {
            return Err(Error::Invalid(format!(
                "invalid encoder widths {:?} / head {}",
                self.hidden_dims, self.head_hidden
            )));
        }
        if self.kind == EncoderKind::BrainNetCnn && self.hidden_dims.len() != 3 {
            return Err(Error::Invalid(
                "BrainNetCNN needs exactly three widths (E2E, E2N, N2G)".into(),
            ));
        }
        Ok(())
    }

    /// Number of parameter layers, including the two head layers.
    pub fn layer_count(&self) -> usize {
        self.hidden_dims.len() + 2
    }

    /// Random initialisation for `node_count`-node inputs.
    pub fn init<R: Rng + ?Sized>(&self, node_count: usize, rng: &mut R) -> Result<ParameterSet> {
        self.validate()?;
        let mut p = ParameterSet::new();
        let out_dim = match self.kind {
            EncoderKind::Gcn => gcn::init(self, node_count, rng, &mut p)?,
            EncoderKind::Gat => gat::init(self, node_count, rng, &mut p)?,
            EncoderKind::BrainNetCnn => brainnetcnn::init(self, node_count, rng, &mut p)?,
        };
        let base = self.hidden_dims.len();
        p.push("head.0.w", glorot(rng, out_dim, self.head_hidden), base)?;
        p.push("head.0.b", Tensor::zeros(1, self.head_hidden), base)?;
        p.push("head.1.w", glorot(rng, self.head_hidden, 1), base + 1)?;
        p.push("head.1.b", Tensor::zeros(1, 1), base + 1)?;
        p.validate()?;
        Ok(p)
    }

    /// Logits `[B, 1]` for a batch.
    pub fn logits<'t>(&self, p: &Bindings<'t>, batch: &GraphBatch<'t>) -> Var<'t> {
        let g = match self.kind {
            EncoderKind::Gcn => gcn::embed(self, p, batch),
            EncoderKind::Gat => gat::embed(self, p, batch),
            EncoderKind::BrainNetCnn => brainnetcnn::embed(self, p, batch),
        };
        head(p, g)
    }

    /// Logit of a single network.
    pub fn forward(&self, params: &ParameterSet, net: &BrainNetwork) -> Result<EncoderOutput> {
        let tape = Tape::new();
        let p = Bindings::inputs(&tape, params);
        let batch = GraphBatch::from_networks(&tape, &[net]);
        let z = self.logits(&p, &batch);
        tape.check_finite()?;
        Ok(EncoderOutput { logit: z.item() })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderOutput {
    pub logit: f64,
}

/// `B` graphs of `M` nodes, stacked vertically.
#[derive(Clone, Copy, Debug)]
pub struct GraphBatch<'t> {
    pub adjacency: Var<'t>,
    pub features: Var<'t>,
    pub graphs: usize,
    pub nodes: usize,
}

impl<'t> GraphBatch<'t> {
    pub fn new(adjacency: Var<'t>, features: Var<'t>, graphs: usize) -> Self {
        let (r, c) = adjacency.dims();
        assert_eq!(
            r,
            graphs * c,
            "adjacency stack {r}x{c} is not {graphs} square blocks"
        );
        assert_eq!(
            features.dims().0,
            r,
            "feature rows must match adjacency rows"
        );
        GraphBatch {
            adjacency,
            features,
            graphs,
            nodes: c,
        }
    }

    /// Constant batch with connection-profile features.
    pub fn from_networks(tape: &'t Tape, nets: &[&BrainNetwork]) -> Self {
        assert!(!nets.is_empty(), "empty batch");
        let m = nets[0].node_count();
        let mut data = Vec::with_capacity(nets.len() * m * m);
        for n in nets {
            assert_eq!(n.node_count(), m, "batch mixes node counts");
            data.extend_from_slice(connection_profile_features(n).data());
        }
        let a = tape.constant(Tensor::matrix(nets.len() * m, m, data));
        GraphBatch::new(a, a, nets.len())
    }

    /// Batch whose adjacency is itself a tape expression (e.g. a learned
    /// projection); features are the connection profiles of that adjacency.
    pub fn from_adjacency(adjacency: Var<'t>, graphs: usize) -> Self {
        GraphBatch::new(adjacency, adjacency, graphs)
    }

    pub fn concat(parts: &[Var<'t>]) -> Self {
        let a = Var::concat(parts, Axis::Rows);
        GraphBatch::from_adjacency(a, parts.len())
    }
}

fn head<'t>(p: &Bindings<'t>, g: Var<'t>) -> Var<'t> {
    let b = g.dims().0;
    let (w0, b0) = (p.get("head.0.w"), p.get("head.0.b"));
    let (w1, b1) = (p.get("head.1.w"), p.get("head.1.b"));
    let h = (g.matmul(w0) + b0.broadcast(b, w0.dims().1)).relu();
    h.matmul(w1) + b1.broadcast(b, 1)
}

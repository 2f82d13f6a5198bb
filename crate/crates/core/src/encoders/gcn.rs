use rand::Rng;

use super::{EncoderConfig, GraphBatch};
use crate::autodiff::{Bindings, Tape, Var};
use crate::data::BrainNetwork;
use crate::error::Result;
use crate::params::{glorot, ParameterSet};
use crate::tensor::Tensor;

pub(super) fn init<R: Rng + ?Sized>(
    cfg: &EncoderConfig,
    m: usize,
    rng: &mut R,
    p: &mut ParameterSet,
) -> Result<usize> {
    let mut fan_in = m;
    for (l, &d) in cfg.hidden_dims.iter().enumerate() {
        p.push(format!("gcn.{l}.w"), glorot(rng, fan_in, d), l)?;
        fan_in = d;
    }
    Ok(fan_in)
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` per block, with `D̃` the row sums of `|A + I|`.
pub(super) fn normalize<'t>(a: Var<'t>, graphs: usize) -> Var<'t> {
    let (r, m) = a.dims();
    let eye = a.tape().constant(stacked_identity(graphs, m));
    let a_hat = a + eye;
    let d = a_hat.abs().sum_cols().powf(-0.5);
    let left = d.broadcast(r, m);
    let right = d.reshape(graphs, m).block_broadcast(m);
    a_hat * left * right
}

fn stacked_identity(graphs: usize, m: usize) -> Tensor {
    let mut t = Tensor::zeros(graphs * m, m);
    for b in 0..graphs {
        for i in 0..m {
            t.set(b * m + i, i, 1.0);
        }
    }
    t
}

/// Normalised propagation matrix of a single network.
pub fn normalized_adjacency(net: &BrainNetwork) -> Tensor {
    let tape = Tape::new();
    normalize(tape.constant(net.adjacency().clone()), 1).value()
}

pub(super) fn embed<'t>(cfg: &EncoderConfig, p: &Bindings<'t>, batch: &GraphBatch<'t>) -> Var<'t> {
    let b = batch.graphs;
    let a_hat = normalize(batch.adjacency, b);
    let mut h = batch.features;
    for l in 0..cfg.hidden_dims.len() {
        let w = p.get(&format!("gcn.{l}.w"));
        h = a_hat.mm(h.matmul(w), false, false, b).relu();
    }
    h.block_sum_rows(b)
}

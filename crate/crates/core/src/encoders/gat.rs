use rand::Rng;

use super::{EncoderConfig, GraphBatch, GAT_ATTENTION_LEAK};
use crate::autodiff::{Bindings, Var};
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
        p.push(format!("gat.{l}.w"), glorot(rng, fan_in, d), l)?;
        p.push(format!("gat.{l}.a_src"), glorot(rng, d, 1), l)?;
        p.push(format!("gat.{l}.a_dst"), glorot(rng, d, 1), l)?;
        if cfg.gat_edge_bias {
            p.push(format!("gat.{l}.gamma"), Tensor::scalar(0.0), l)?;
        }
        fan_in = d;
    }
    Ok(fan_in)
}

/// Row-stochastic attention `[B·M, M]` for projected features `wh`.
fn attention<'t>(p: &Bindings<'t>, l: usize, wh: Var<'t>, batch: &GraphBatch<'t>) -> Var<'t> {
    let (r, m) = (batch.graphs * batch.nodes, batch.nodes);
    let s = wh.matmul(p.get(&format!("gat.{l}.a_src")));
    let t = wh.matmul(p.get(&format!("gat.{l}.a_dst")));
    let mut e = s.broadcast(r, m) + t.reshape(batch.graphs, m).block_broadcast(m);
    if let Some(gamma) = p.try_get(&format!("gat.{l}.gamma")) {
        e = e + gamma.broadcast(r, m) * batch.adjacency;
    }
    e.leaky_relu(GAT_ATTENTION_LEAK).softmax_rows()
}

pub(super) fn embed<'t>(cfg: &EncoderConfig, p: &Bindings<'t>, batch: &GraphBatch<'t>) -> Var<'t> {
    let b = batch.graphs;
    let mut h = batch.features;
    for l in 0..cfg.hidden_dims.len() {
        let wh = h.matmul(p.get(&format!("gat.{l}.w")));
        let alpha = attention(p, l, wh, batch);
        h = alpha.mm(wh, false, false, b).relu();
    }
    h.block_sum_rows(b)
}

#[cfg(test)]
mod tests {
    use super::super::tests::{random_net, small};
    use super::super::EncoderKind;
    use super::*;
    use crate::autodiff::Tape;
    use crate::data::BrainNetwork;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn first_layer_attention(params: &ParameterSet, nets: &[&BrainNetwork]) -> Tensor {
        let tape = Tape::new();
        let p = Bindings::inputs(&tape, params);
        let batch = GraphBatch::from_networks(&tape, nets);
        let wh = batch.features.matmul(p.get("gat.0.w"));
        attention(&p, 0, wh, &batch).value()
    }

    #[test]
    fn single_node_attends_to_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = small(EncoderKind::Gat);
        let params = cfg.init(1, &mut rng).unwrap();
        let net = BrainNetwork::new(Tensor::scalar(0.7), 1).unwrap();
        assert_eq!(first_layer_attention(&params, &[&net]).data(), &[1.0]);
    }

    #[test]
    fn attention_rows_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut cfg = small(EncoderKind::Gat);
        cfg.gat_edge_bias = true;
        let mut params = cfg.init(6, &mut rng).unwrap();
        *params.get_mut("gat.0.gamma").unwrap() = Tensor::scalar(1.5);
        let nets = [random_net(&mut rng, 6, 0), random_net(&mut rng, 6, 1)];
        let alpha = first_layer_attention(&params, &[&nets[0], &nets[1]]);
        for i in 0..alpha.rows() {
            let row = alpha.row(i);
            assert!(row.iter().all(|&v| v > 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn edge_bias_starts_neutral() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let plain = small(EncoderKind::Gat);
        let mut biased = plain.clone();
        biased.gat_edge_bias = true;
        let pb = biased.init(5, &mut rng).unwrap();
        let names: Vec<&str> = pb.names().filter(|n| !n.ends_with("gamma")).collect();
        let pp = pb.sub_set(&names).unwrap();
        let net = random_net(&mut rng, 5, 0);
        assert_eq!(
            plain.forward(&pp, &net).unwrap(),
            biased.forward(&pb, &net).unwrap()
        );
    }
}

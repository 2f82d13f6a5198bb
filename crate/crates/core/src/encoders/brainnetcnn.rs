use rand::Rng;

use super::{EncoderConfig, GraphBatch, BRAINNETCNN_LEAK};
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
    let (c, d, e) = (cfg.hidden_dims[0], cfg.hidden_dims[1], cfg.hidden_dims[2]);
    p.push("bnc.e2e.r", glorot(rng, m, c), 0)?;
    p.push("bnc.e2e.s", glorot(rng, m, c), 0)?;
    p.push("bnc.e2n.t", glorot(rng, c * m, d), 1)?;
    p.push("bnc.n2g.u", glorot(rng, m * d, e), 2)?;
    Ok(e)
}

/// Edge-to-edge filter bank on `B` stacked adjacency blocks.
///
/// `r`, `s` are `[M, C]`. The result is `[B·M, C·M]` with
/// `Y[b·M + i, c·M + j] = Σ_k r[k,c]·A_b[i,k] + s[k,c]·A_b[k,j]`.
pub fn e2e<'t>(a: Var<'t>, r: Var<'t>, s: Var<'t>, graphs: usize) -> Var<'t> {
    let m = a.dims().1;
    let c = r.dims().1;
    let rows = a.matmul(r);
    let cols = a.block_t(graphs).matmul(s);
    let expand = a.tape().constant(channel_expand(c, m));
    let row_part = rows.matmul(expand);
    let col_part = cols
        .block_t(graphs)
        .reshape(graphs, c * m)
        .block_broadcast(m);
    row_part + col_part
}

/// `[C, C·M]` with ones at `(c, c·M + j)`.
fn channel_expand(c: usize, m: usize) -> Tensor {
    let mut t = Tensor::zeros(c, c * m);
    for ch in 0..c {
        for j in 0..m {
            t.set(ch, ch * m + j, 1.0);
        }
    }
    t
}

pub(super) fn embed<'t>(_cfg: &EncoderConfig, p: &Bindings<'t>, batch: &GraphBatch<'t>) -> Var<'t> {
    let (b, m) = (batch.graphs, batch.nodes);
    let y = e2e(batch.adjacency, p.get("bnc.e2e.r"), p.get("bnc.e2e.s"), b)
        .leaky_relu(BRAINNETCNN_LEAK);
    let t = p.get("bnc.e2n.t");
    let n = y.matmul(t).leaky_relu(BRAINNETCNN_LEAK);
    let d = t.dims().1;
    n.reshape(b, m * d).matmul(p.get("bnc.n2g.u"))
}

#[cfg(test)]
mod tests {
    use super::super::tests::random_net;
    use super::*;
    use crate::autodiff::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn one_by_one_collapses_to_twice_the_weight() {
        let tape = Tape::new();
        let one = tape.constant(Tensor::scalar(1.0));
        let y = e2e(tape.constant(Tensor::scalar(0.8)), one, one, 1);
        assert_eq!(y.item(), 1.6);
    }

    #[test]
    fn matches_explicit_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (m, c) = (5, 3);
        let nets = [random_net(&mut rng, m, 0), random_net(&mut rng, m, 1)];
        let r = glorot(&mut rng, m, c);
        let s = glorot(&mut rng, m, c);
        let tape = Tape::new();
        let batch = GraphBatch::from_networks(&tape, &[&nets[0], &nets[1]]);
        let y = e2e(
            batch.adjacency,
            tape.constant(r.clone()),
            tape.constant(s.clone()),
            2,
        )
        .value();
        for (b, net) in nets.iter().enumerate() {
            let a = net.adjacency();
            for ch in 0..c {
                for i in 0..m {
                    for j in 0..m {
                        let want: f64 = (0..m)
                            .map(|k| r.get(k, ch) * a.get(i, k) + s.get(k, ch) * a.get(k, j))
                            .sum();
                        assert!((y.get(b * m + i, ch * m + j) - want).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn full_size_output_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = random_net(&mut rng, 84, 0);
        let tape = Tape::new();
        let a = tape.constant(net.adjacency().clone());
        let y = e2e(
            a,
            tape.constant(glorot(&mut rng, 84, 8)),
            tape.constant(glorot(&mut rng, 84, 8)),
            1,
        );
        // 84 rows × (8 channels · 84 columns).
        assert_eq!(y.dims(), (84, 8 * 84));
        assert_eq!(y.value().len(), 8 * 84 * 84);
    }
}

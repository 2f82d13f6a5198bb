//! Reverse-mode automatic differentiation over dense matrices.
//!
//! [`Tape`] records primitive ops eagerly. Because backward rules are
//! expressed with the same primitives, gradients can be recorded and
//! differentiated again, which is what the second-order meta-learning
//! strategies rely on.

mod graph;
pub mod ops;
mod tape;

pub use graph::{gradient_of_gradient, grads_to_params, Bindings, TapeGraph};
pub use ops::{Axis, Op};
pub use tape::{Tape, Var};

pub mod gradcheck;

#[cfg(test)]
mod tests {
    use super::gradcheck::{central_difference, max_relative_error};
    use super::*;
    use crate::params::ParameterSet;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single(name: &str, t: Tensor) -> ParameterSet {
        ParameterSet::new().with(name, t, 0)
    }

    #[test]
    fn sigmoid_midpoint() {
        let g = TapeGraph::build(&single("x", Tensor::scalar(0.0)), |_, b| {
            b.get("x").sigmoid()
        })
        .unwrap();
        assert_eq!(
            g.evaluate(&single("x", Tensor::scalar(0.0)))
                .unwrap()
                .item(),
            0.5
        );
        let d = g
            .gradient(&single("x", Tensor::scalar(0.0)), &["x"])
            .unwrap();
        assert_eq!(d.get("x").unwrap().item(), 0.25);
    }

    #[test]
    fn relu_sum() {
        let x = Tensor::from_rows(&[&[-1.0, 2.0]]);
        let g = TapeGraph::build(&single("x", x.clone()), |_, b| b.get("x").relu().sum()).unwrap();
        assert_eq!(g.evaluate(&single("x", x)).unwrap().item(), 2.0);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let x = Tensor::from_rows(&[&[0.0, 1.0]]);
        let g = TapeGraph::build(&single("x", x.clone()), |_, b| b.get("x").relu().sum()).unwrap();
        let d = g.gradient(&single("x", x), &["x"]).unwrap();
        assert_eq!(d.get("x").unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn hand_matmul() {
        let a = Tensor::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let x = Tensor::from_rows(&[&[1.0], &[2.0]]);
        let inputs = ParameterSet::new().with("a", a, 0).with("x", x, 0);
        let g = TapeGraph::build(&inputs, |_, b| b.get("a").matmul(b.get("x"))).unwrap();
        assert_eq!(g.evaluate(&inputs).unwrap().data(), &[2.0, 1.0]);
    }

    #[test]
    fn power_rule() {
        let g = TapeGraph::build(&single("x", Tensor::scalar(3.0)), |_, b| {
            let x = b.get("x");
            x * x
        })
        .unwrap();
        let d = g
            .gradient(&single("x", Tensor::scalar(3.0)), &["x"])
            .unwrap();
        assert_eq!(d.get("x").unwrap().item(), 6.0);
    }

    #[test]
    fn linear_map_gradient() {
        let inputs = ParameterSet::new()
            .with("x", Tensor::from_rows(&[&[1.0, 2.0]]), 0)
            .with("w", Tensor::from_rows(&[&[0.3], &[-0.7]]), 0);
        let g = TapeGraph::build(&inputs, |_, b| b.get("x").matmul(b.get("w")).sum()).unwrap();
        let d = g.gradient(&inputs, &["w"]).unwrap();
        assert_eq!(d.get("w").unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn errors_surface() {
        let g =
            TapeGraph::build(&single("x", Tensor::zeros(1, 2)), |_, b| b.get("x").relu()).unwrap();
        assert!(matches!(
            g.gradient(&single("x", Tensor::zeros(1, 2)), &["x"]),
            Err(crate::Error::NonScalar(_))
        ));
        assert!(matches!(
            g.gradient(&single("x", Tensor::zeros(1, 2)), &["y"]),
            Err(crate::Error::UnknownName(_))
        ));
        assert!(matches!(
            g.evaluate(&single("x", Tensor::zeros(2, 2))),
            Err(crate::Error::Shape(_))
        ));
        let lg =
            TapeGraph::build(&single("x", Tensor::scalar(1.0)), |_, b| b.get("x").ln()).unwrap();
        assert!(matches!(
            lg.evaluate(&single("x", Tensor::scalar(-1.0))),
            Err(crate::Error::NonFinite(_))
        ));
    }

    #[test]
    fn replay_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::matrix(3, 4, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect());
        let g = TapeGraph::build(&single("x", x.clone()), |_, b| {
            let x = b.get("x");
            x.matmul(x.t()).softmax_rows().tanh().sum()
        })
        .unwrap();
        let a = g.evaluate(&single("x", x.clone())).unwrap();
        let b = g.evaluate(&single("x", x)).unwrap();
        assert_eq!(a.item().to_bits(), b.item().to_bits());
    }

    // Scalar meta-loss: L(θ) = θ², θ' = θ − β·2θ, outer L(θ') = θ'².
    fn quadratic_meta(theta: f64, beta: f64, second_order: bool) -> f64 {
        let p = single("t", Tensor::scalar(theta));
        gradient_of_gradient(
            &p,
            &["t"],
            &["t"],
            beta,
            second_order,
            |_, b| {
                let t = b.get("t");
                t * t
            },
            |_, b| {
                let t = b.get("t");
                t * t
            },
        )
        .unwrap()
        .get("t")
        .unwrap()
        .item()
    }

    #[test]
    fn quadratic_meta_gradient() {
        let m = quadratic_meta(1.0, 0.1, true);
        assert!((m - 1.28).abs() < 1e-12, "{m}");
        // Finite differences through the whole inner step.
        let h = 1e-5;
        let f = |t: f64| {
            let tp = t - 0.1 * 2.0 * t;
            tp * tp
        };
        let fd = (f(1.0 + h) - f(1.0 - h)) / (2.0 * h);
        assert!((m - fd).abs() / fd.abs() < 1e-8);
    }

    #[test]
    fn zero_inner_step_is_plain_gradient() {
        assert_eq!(quadratic_meta(1.5, 0.0, true), 3.0);
    }

    #[test]
    fn constant_loss_has_zero_meta_gradient() {
        let p = single("t", Tensor::scalar(0.7));
        let m = gradient_of_gradient(
            &p,
            &["t"],
            &["t"],
            0.1,
            true,
            |t, _| t.scalar(2.0),
            |t, _| t.scalar(2.0),
        )
        .unwrap();
        assert_eq!(m.get("t").unwrap().item(), 0.0);
    }

    #[test]
    fn first_order_drops_curvature_factor() {
        // L'' = 2, so second-order = first-order · (1 − 2β).
        let (so, fo) = (
            quadratic_meta(1.0, 0.1, true),
            quadratic_meta(1.0, 0.1, false),
        );
        assert!((so - fo * (1.0 - 0.2)).abs() < 1e-12);
    }

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::matrix(
            r,
            c,
            (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
    }

    /// Builds `x ↦ sum(w ⊙ op(x))` with a fixed random `w` so the output is
    /// scalar yet sensitive to every output coordinate.
    fn check_unary(name: &str, x: Tensor, op: impl for<'t> Fn(Var<'t>) -> Var<'t>) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let probe = {
            let tape = Tape::new();
            let y = op(tape.constant(x.clone()));
            let (r, c) = y.dims();
            random(&mut rng, r, c)
        };
        let inputs = single("x", x.clone());
        let g = TapeGraph::build(&inputs, |t, b| {
            (op(b.get("x")) * t.constant(probe.clone())).sum()
        })
        .unwrap();
        let analytic = g.gradient(&inputs, &["x"]).unwrap();
        let numeric =
            central_difference(&inputs, 1e-5, |p| g.evaluate(p).map(|t| t.item())).unwrap();
        let err = max_relative_error(&analytic, &numeric);
        assert!(err <= 1e-5, "{name}: relative error {err}");
    }

    #[test]
    fn primitive_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let x = random(&mut rng, 3, 4);
            let w = random(&mut rng, 4, 2);
            let sq = random(&mut rng, 4, 4);
            check_unary("relu", x.clone(), |v| v.relu());
            check_unary("leaky", x.clone(), |v| v.leaky_relu(0.33));
            check_unary("sigmoid", x.clone(), |v| v.sigmoid());
            check_unary("tanh", x.clone(), |v| v.tanh());
            check_unary("softplus", x.clone(), |v| v.softplus());
            check_unary("exp", x.clone(), |v| v.exp());
            check_unary("ln", x.map(|v| v.abs() + 0.5), |v| v.ln());
            check_unary("abs", x.clone(), |v| v.abs());
            check_unary("powf", x.map(|v| v.abs() + 0.5), |v| v.powf(-0.5));
            check_unary("transpose", x.clone(), |v| v.t());
            check_unary("block_t", x.clone(), |v| v.block_t(3));
            check_unary("block_t2", sq.clone(), |v| v.block_t(2));
            check_unary("reshape", x.clone(), |v| v.reshape(2, 6));
            check_unary("sum", x.clone(), |v| v.sum());
            check_unary("mean", x.clone(), |v| v.mean());
            check_unary("sum_rows", x.clone(), |v| v.sum_rows());
            check_unary("sum_cols", x.clone(), |v| v.sum_cols());
            check_unary("softmax", x.clone(), |v| v.softmax_rows());
            check_unary("scale", x.clone(), |v| v.scale(-2.5).add_scalar(1.0));
            check_unary("broadcast_row", x.clone(), |v| v.sum_rows().broadcast(5, 4));
            check_unary("broadcast_col", x.clone(), |v| v.sum_cols().broadcast(3, 7));
            check_unary("broadcast_scalar", x.clone(), |v| v.sum().broadcast(2, 2));
            check_unary("block_sum", x.clone(), |v| v.block_sum_rows(3));
            check_unary("block_broadcast", x.clone(), |v| v.block_broadcast(3));
            check_unary("slice_cols", x.clone(), |v| v.slice(Axis::Cols, 1, 2));
            check_unary("slice_rows", x.clone(), |v| v.slice(Axis::Rows, 1, 1));
            check_unary("concat", x.clone(), |v| {
                Var::concat(&[v, v.relu(), v], Axis::Cols)
            });
            check_unary("concat_rows", x.clone(), |v| {
                Var::concat(&[v, v.t().t()], Axis::Rows)
            });
            check_unary("mul_self", x.clone(), |v| v * v.sigmoid());
            check_unary("sub", x.clone(), |v| v - v.tanh());
            let wc = w.clone();
            check_unary("matmul_nn", x.clone(), move |v| {
                v.matmul(v.tape().constant(wc.clone()))
            });
            let c32 = random(&mut rng, 3, 2);
            check_unary("matmul_tn", x.clone(), move |v| {
                v.mm(v.tape().constant(c32.clone()), true, false, 1)
            });
            let sqc = sq.clone();
            check_unary("matmul_nt", sq.clone(), move |v| {
                v.mm(v.tape().constant(sqc.clone()), false, true, 1)
            });
            let sqc = sq.clone();
            check_unary("matmul_tt", sq.clone(), move |v| {
                v.mm(v.tape().constant(sqc.clone()), true, true, 1)
            });
            check_unary("matmul_tn_self", x.clone(), |v| v.mm(v, true, false, 1));
            check_unary("block_matmul", sq.clone(), |v| v.mm(v, false, true, 2));
            check_unary("block_matmul_tn", sq.clone(), |v| {
                v.mm(v.sigmoid(), true, false, 2)
            });
        }
    }

    /// Second derivatives: differentiate the recorded gradient again and
    /// compare with finite differences of the first-order gradient.
    #[test]
    fn second_order_matches_finite_differences_of_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random(&mut rng, 3, 3);
        let w = random(&mut rng, 3, 3);
        let inputs = ParameterSet::new().with("x", x, 0);
        // f(x) = sum(softmax(tanh(x·W)) ⊙ sigmoid(x)); h(x) = ‖∇f(x)‖².
        let h = |p: &ParameterSet, create: bool| -> (f64, ParameterSet) {
            let tape = Tape::new();
            let b = Bindings::params(&tape, p);
            let xv = b.get("x");
            let f =
                (xv.matmul(tape.constant(w.clone())).tanh().softmax_rows() * xv.sigmoid()).sum();
            let g = tape.grad(f, &[xv], true).unwrap()[0];
            let hv = (g * g).sum();
            let d = if create {
                tape.grad(hv, &[xv], false).unwrap()[0].value()
            } else {
                Tensor::zeros(3, 3)
            };
            (hv.item(), ParameterSet::new().with("x", d, 0))
        };
        let (_, analytic) = h(&inputs, true);
        let numeric = central_difference(&inputs, 1e-5, |p| Ok(h(p, false).0)).unwrap();
        let err = max_relative_error(&analytic, &numeric);
        assert!(err <= 1e-5, "relative error {err}");
    }
}

//! Recording tape with a differentiable backward pass.
//!
//! Every operation is evaluated eagerly and appended to the tape. The
//! backward pass is written in terms of the same primitive ops, so with
//! `create_graph` the gradients are themselves tape nodes and can be
//! differentiated again.

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::ops;

use smallvec::SmallVec;

use super::ops::{compute, Axis, Op};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) inputs: SmallVec<[usize; 2]>,
    pub(crate) value: Tensor,
    pub(crate) requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    first_non_finite: Cell<Option<usize>>,
}

/// Handle to one node of a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(
        &self,
        op: Op,
        inputs: SmallVec<[usize; 2]>,
        value: Tensor,
        requires_grad: bool,
    ) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        if self.first_non_finite.get().is_none() && !value.is_finite() {
            self.first_non_finite.set(Some(id));
        }
        nodes.push(Node {
            op,
            inputs,
            value,
            requires_grad,
        });
        Var { tape: self, id }
    }

    /// Differentiable named input.
    pub fn param(&self, name: &str, value: Tensor) -> Var<'_> {
        self.push(
            Op::Leaf {
                name: Some(name.to_string()),
                requires_grad: true,
            },
            SmallVec::new(),
            value,
            true,
        )
    }

    /// Named input that gradients do not flow into.
    pub fn input(&self, name: &str, value: Tensor) -> Var<'_> {
        self.push(
            Op::Leaf {
                name: Some(name.to_string()),
                requires_grad: false,
            },
            SmallVec::new(),
            value,
            false,
        )
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(
            Op::Leaf {
                name: None,
                requires_grad: false,
            },
            SmallVec::new(),
            value,
            false,
        )
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.constant(Tensor::scalar(v))
    }

    pub(crate) fn apply(&self, op: Op, inputs: &[Var<'_>]) -> Var<'_> {
        let ids: SmallVec<[usize; 2]> = inputs.iter().map(|v| v.id).collect();
        let (value, requires_grad) = {
            let nodes = self.nodes.borrow();
            let xs: SmallVec<[&Tensor; 4]> = ids.iter().map(|&i| &nodes[i].value).collect();
            (
                compute(&op, &xs),
                ids.iter().any(|&i| nodes[i].requires_grad),
            )
        };
        self.push(op, ids, value, requires_grad)
    }

    /// Fails with the first op that produced NaN or ±∞.
    pub fn check_finite(&self) -> Result<()> {
        match self.first_non_finite.get() {
            None => Ok(()),
            Some(id) => Err(Error::NonFinite(format!(
                "node {id} ({})",
                self.nodes.borrow()[id].op.name()
            ))),
        }
    }

    pub fn var(&self, id: usize) -> Var<'_> {
        assert!(id < self.len(), "node {id} not on tape");
        Var { tape: self, id }
    }

    /// Gradients of scalar `output` with respect to each of `wrt`.
    ///
    /// With `create_graph` the returned vars stay connected to the tape and
    /// can be differentiated again; otherwise they are detached constants.
    /// Inputs unreachable from `output` get zero gradients.
    pub fn grad<'t>(
        &'t self,
        output: Var<'t>,
        wrt: &[Var<'t>],
        create_graph: bool,
    ) -> Result<Vec<Var<'t>>> {
        let out_shape = output.shape();
        if out_shape != [1, 1] {
            return Err(Error::NonScalar(out_shape));
        }
        let n = output.id + 1;
        let mut adj: Vec<Option<Var<'t>>> = vec![None; n];
        adj[output.id] = Some(self.constant(Tensor::scalar(1.0)));

        for id in (0..n).rev() {
            let Some(g) = adj[id] else { continue };
            let (op, inputs, input_grad) = {
                let nodes = self.nodes.borrow();
                let node = &nodes[id];
                if !node.requires_grad || matches!(node.op, Op::Leaf { .. }) {
                    continue;
                }
                let flags: SmallVec<[bool; 4]> = node
                    .inputs
                    .iter()
                    .map(|&i| nodes[i].requires_grad)
                    .collect();
                (node.op.clone(), node.inputs.clone(), flags)
            };
            let xs: SmallVec<[Var<'t>; 4]> =
                inputs.iter().map(|&i| Var { tape: self, id: i }).collect();
            let y = Var { tape: self, id };
            let contributions = vjp(&op, &xs, y, g, &input_grad);
            for (k, c) in contributions.into_iter().enumerate() {
                let Some(c) = c else { continue };
                let slot = &mut adj[inputs[k]];
                *slot = Some(match *slot {
                    None => c,
                    Some(prev) => prev + c,
                });
            }
        }

        wrt.iter()
            .map(|w| {
                let g = match adj.get(w.id).copied().flatten() {
                    Some(g) => g,
                    None => {
                        let (r, c) = w.dims();
                        return Ok(self.constant(Tensor::zeros(r, c)));
                    }
                };
                Ok(if create_graph { g } else { g.detach() })
            })
            .collect()
    }

    /// Re-evaluates every node with new values for named leaves, in
    /// recording order. Unnamed leaves keep their recorded values.
    pub fn replay(&self, feeds: &HashMap<String, Tensor>) -> Result<Vec<Tensor>> {
        let nodes = self.nodes.borrow();
        let mut values: Vec<Tensor> = Vec::with_capacity(nodes.len());
        for (id, node) in nodes.iter().enumerate() {
            let value = match &node.op {
                Op::Leaf {
                    name: Some(name), ..
                } => match feeds.get(name) {
                    Some(t) if t.shape() == node.value.shape() => t.clone(),
                    Some(t) => {
                        return Err(Error::Shape(format!(
                            "input `{name}` has shape {:?}, graph expects {:?}",
                            t.shape(),
                            node.value.shape()
                        )))
                    }
                    None => node.value.clone(),
                },
                Op::Leaf { name: None, .. } => node.value.clone(),
                op => {
                    let xs: SmallVec<[&Tensor; 4]> =
                        node.inputs.iter().map(|&i| &values[i]).collect();
                    compute(op, &xs)
                }
            };
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("node {id} ({})", node.op.name())));
            }
            values.push(value);
        }
        Ok(values)
    }

    /// A new tape with the same ops, re-evaluated with `feeds`.
    pub fn replayed(&self, feeds: &HashMap<String, Tensor>) -> Result<Tape> {
        let values = self.replay(feeds)?;
        let nodes = self.nodes.borrow();
        let fresh = nodes
            .iter()
            .zip(values)
            .map(|(n, value)| Node {
                op: n.op.clone(),
                inputs: n.inputs.clone(),
                value,
                requires_grad: n.requires_grad,
            })
            .collect();
        Ok(Tape {
            nodes: RefCell::new(fresh),
            first_non_finite: Cell::new(None),
        })
    }
}

/// Vector-Jacobian products of one node, as new tape nodes.
fn vjp<'t>(
    op: &Op,
    x: &[Var<'t>],
    y: Var<'t>,
    g: Var<'t>,
    need: &[bool],
) -> SmallVec<[Option<Var<'t>>; 4]> {
    let mut out: SmallVec<[Option<Var<'t>>; 4]> = SmallVec::from_elem(None, x.len());
    let mut set = |k: usize, f: &dyn Fn() -> Var<'t>| {
        if need[k] {
            out[k] = Some(f());
        }
    };
    match *op {
        Op::Leaf { .. } => {}
        Op::MatMul { ta, tb, blocks } => {
            let (a, b) = (x[0], x[1]);
            match (ta, tb) {
                (false, false) => {
                    set(0, &|| g.mm(b, false, true, blocks));
                    set(1, &|| a.mm(g, true, false, blocks));
                }
                (true, false) => {
                    set(0, &|| b.mm(g, false, true, blocks));
                    set(1, &|| a.mm(g, false, false, blocks));
                }
                (false, true) => {
                    set(0, &|| g.mm(b, false, false, blocks));
                    set(1, &|| g.mm(a, true, false, blocks));
                }
                (true, true) => {
                    set(0, &|| b.mm(g, true, true, blocks));
                    set(1, &|| g.mm(a, true, true, blocks));
                }
            }
        }
        Op::Add => {
            set(0, &|| g);
            set(1, &|| g);
        }
        Op::Sub => {
            set(0, &|| g);
            set(1, &|| g.scale(-1.0));
        }
        Op::Mul => {
            set(0, &|| g * x[1]);
            set(1, &|| g * x[0]);
        }
        Op::Scale(c) => set(0, &|| g.scale(c)),
        Op::AddScalar(_) => set(0, &|| g),
        Op::Transpose => set(0, &|| g.t()),
        Op::BlockTranspose { blocks } => set(0, &|| g.block_t(blocks)),
        Op::Reshape { .. } => {
            let (r, c) = x[0].dims();
            set(0, &|| g.reshape(r, c));
        }
        Op::Relu => set(0, &|| g.tape.apply(Op::ReluMask, &[g, x[0]])),
        Op::LeakyRelu(s) => set(0, &|| g.tape.apply(Op::LeakyMask(s), &[g, x[0]])),
        Op::ReluMask => set(0, &|| g.tape.apply(Op::ReluMask, &[g, x[1]])),
        Op::LeakyMask(s) => set(0, &|| g.tape.apply(Op::LeakyMask(s), &[g, x[1]])),
        Op::SignMul => set(0, &|| g.tape.apply(Op::SignMul, &[g, x[1]])),
        Op::Sigmoid => set(0, &|| g * (y * y.scale(-1.0).add_scalar(1.0))),
        Op::Tanh => set(0, &|| g * (y * y).scale(-1.0).add_scalar(1.0)),
        Op::Softplus => set(0, &|| g * x[0].sigmoid()),
        Op::Exp => set(0, &|| g * y),
        Op::Log => set(0, &|| g * x[0].powf(-1.0)),
        Op::Abs => set(0, &|| g.tape.apply(Op::SignMul, &[g, x[0]])),
        Op::Powf(p) => set(0, &|| g * x[0].powf(p - 1.0).scale(p)),
        Op::Sum => {
            let (r, c) = x[0].dims();
            set(0, &|| g.broadcast(r, c));
        }
        Op::SumRows | Op::SumCols => {
            let (r, c) = x[0].dims();
            set(0, &|| g.broadcast(r, c));
        }
        Op::BlockSumRows { blocks } => {
            let rep = x[0].dims().0 / blocks;
            set(0, &|| g.block_broadcast(rep));
        }
        Op::Broadcast { .. } => {
            let src = x[0].dims();
            set(0, &|| match src {
                (1, 1) => g.sum(),
                (1, _) => g.sum_rows(),
                _ => g.sum_cols(),
            });
        }
        Op::BlockBroadcast { rep } => {
            let blocks = x[0].dims().0;
            debug_assert_eq!(g.dims().0, blocks * rep);
            set(0, &|| g.block_sum_rows(blocks));
        }
        Op::SoftmaxRows => {
            let (_, c) = y.dims();
            set(0, &|| y * (g - (g * y).sum_cols().broadcast(y.dims().0, c)));
        }
        Op::Concat(axis) => {
            let mut offset = 0;
            for (k, xi) in x.iter().enumerate() {
                let len = match axis {
                    Axis::Rows => xi.dims().0,
                    Axis::Cols => xi.dims().1,
                };
                let start = offset;
                set(k, &|| g.slice(axis, start, len));
                offset += len;
            }
        }
        Op::Slice { axis, start, len } => {
            let (r, c) = x[0].dims();
            set(0, &|| {
                let tape = g.tape;
                let total = match axis {
                    Axis::Rows => r,
                    Axis::Cols => c,
                };
                let zeros = |n: usize| match axis {
                    Axis::Rows => tape.constant(Tensor::zeros(n, c)),
                    Axis::Cols => tape.constant(Tensor::zeros(r, n)),
                };
                let mut parts = Vec::with_capacity(3);
                if start > 0 {
                    parts.push(zeros(start));
                }
                parts.push(g);
                if start + len < total {
                    parts.push(zeros(total - start - len));
                }
                if parts.len() == 1 {
                    g
                } else {
                    Var::concat(&parts, axis)
                }
            });
        }
    }
    out
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].value.item()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.tape.nodes.borrow()[self.id].value.dims2()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Constant copy of this value, cut off from gradient flow.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant(self.value())
    }

    fn unary(self, op: Op) -> Var<'t> {
        self.tape.apply(op, &[self])
    }

    pub fn matmul(self, rhs: Var<'t>) -> Var<'t> {
        self.mm(rhs, false, false, 1)
    }

    /// Block-wise `op(self) · op(rhs)` over `blocks` vertically stacked blocks.
    pub fn mm(self, rhs: Var<'t>, ta: bool, tb: bool, blocks: usize) -> Var<'t> {
        self.tape.apply(Op::MatMul { ta, tb, blocks }, &[self, rhs])
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(c))
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.unary(Op::AddScalar(c))
    }

    pub fn t(self) -> Var<'t> {
        self.unary(Op::Transpose)
    }

    pub fn block_t(self, blocks: usize) -> Var<'t> {
        self.unary(Op::BlockTranspose { blocks })
    }

    pub fn reshape(self, rows: usize, cols: usize) -> Var<'t> {
        self.unary(Op::Reshape { rows, cols })
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(Op::Relu)
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        self.unary(Op::LeakyRelu(slope))
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid)
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Op::Tanh)
    }

    /// `ln(1 + eˣ)`, evaluated without overflow.
    pub fn softplus(self) -> Var<'t> {
        self.unary(Op::Softplus)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(Op::Log)
    }

    pub fn abs(self) -> Var<'t> {
        self.unary(Op::Abs)
    }

    pub fn powf(self, p: f64) -> Var<'t> {
        self.unary(Op::Powf(p))
    }

    pub fn sum(self) -> Var<'t> {
        self.unary(Op::Sum)
    }

    pub fn mean(self) -> Var<'t> {
        let n = {
            let (r, c) = self.dims();
            (r * c) as f64
        };
        self.sum().scale(1.0 / n)
    }

    pub fn sum_rows(self) -> Var<'t> {
        self.unary(Op::SumRows)
    }

    pub fn sum_cols(self) -> Var<'t> {
        self.unary(Op::SumCols)
    }

    pub fn block_sum_rows(self, blocks: usize) -> Var<'t> {
        self.unary(Op::BlockSumRows { blocks })
    }

    pub fn broadcast(self, rows: usize, cols: usize) -> Var<'t> {
        if self.dims() == (rows, cols) {
            return self;
        }
        self.unary(Op::Broadcast { rows, cols })
    }

    pub fn block_broadcast(self, rep: usize) -> Var<'t> {
        self.unary(Op::BlockBroadcast { rep })
    }

    pub fn softmax_rows(self) -> Var<'t> {
        self.unary(Op::SoftmaxRows)
    }

    pub fn slice(self, axis: Axis, start: usize, len: usize) -> Var<'t> {
        self.unary(Op::Slice { axis, start, len })
    }

    pub fn concat(parts: &[Var<'t>], axis: Axis) -> Var<'t> {
        assert!(!parts.is_empty(), "concat of nothing");
        parts[0].tape.apply(Op::Concat(axis), parts)
    }
}

macro_rules! binop {
    ($trait:ident, $method:ident, $op:expr) => {
        impl<'t> ops::$trait for Var<'t> {
            type Output = Var<'t>;
            fn $method(self, rhs: Var<'t>) -> Var<'t> {
                assert!(
                    std::ptr::eq(self.tape, rhs.tape),
                    "vars from different tapes"
                );
                self.tape.apply($op, &[self, rhs])
            }
        }
    };
}

binop!(Add, add, Op::Add);
binop!(Sub, sub, Op::Sub);
binop!(Mul, mul, Op::Mul);

impl<'t> ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }
}

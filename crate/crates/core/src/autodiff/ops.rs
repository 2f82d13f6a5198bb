//! Primitive operations and their forward kernels.

use crate::tensor::{matmul_blocks, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    /// Named placeholder or anonymous constant.
    Leaf {
        name: Option<String>,
        requires_grad: bool,
    },
    /// Block-wise `op(a) · op(b)`; `blocks == 1` is a plain product.
    MatMul {
        ta: bool,
        tb: bool,
        blocks: usize,
    },
    Add,
    Sub,
    Mul,
    Scale(f64),
    AddScalar(f64),
    Transpose,
    /// Transpose each of `blocks` vertically stacked blocks.
    BlockTranspose {
        blocks: usize,
    },
    Reshape {
        rows: usize,
        cols: usize,
    },
    Relu,
    LeakyRelu(f64),
    /// `g ⊙ 1[x > 0]` for inputs `(g, x)`.
    ReluMask,
    /// `g ⊙ (x > 0 ? 1 : slope)` for inputs `(g, x)`.
    LeakyMask(f64),
    /// `g ⊙ sign(x)` for inputs `(g, x)`.
    SignMul,
    Sigmoid,
    Tanh,
    Softplus,
    Exp,
    Log,
    Abs,
    Powf(f64),
    Sum,
    /// Column sums: `[m, n] -> [1, n]`.
    SumRows,
    /// Row sums: `[m, n] -> [m, 1]`.
    SumCols,
    /// Sum over rows within each of `blocks` stacked blocks: `[B·m, n] -> [B, n]`.
    BlockSumRows {
        blocks: usize,
    },
    /// Expand `[1,1]`, `[1,n]` or `[m,1]` to `[rows, cols]`.
    Broadcast {
        rows: usize,
        cols: usize,
    },
    /// Repeat every row `rep` times: `[B, n] -> [B·rep, n]`.
    BlockBroadcast {
        rep: usize,
    },
    SoftmaxRows,
    Concat(Axis),
    Slice {
        axis: Axis,
        start: usize,
        len: usize,
    },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::Transpose => "transpose",
            Op::BlockTranspose { .. } => "block_transpose",
            Op::Reshape { .. } => "reshape",
            Op::Relu => "relu",
            Op::LeakyRelu(_) => "leaky_relu",
            Op::ReluMask => "relu_mask",
            Op::LeakyMask(_) => "leaky_mask",
            Op::SignMul => "sign_mul",
            Op::Sigmoid => "sigmoid",
            Op::Tanh => "tanh",
            Op::Softplus => "softplus",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Abs => "abs",
            Op::Powf(_) => "powf",
            Op::Sum => "sum",
            Op::SumRows => "sum_rows",
            Op::SumCols => "sum_cols",
            Op::BlockSumRows { .. } => "block_sum_rows",
            Op::Broadcast { .. } => "broadcast",
            Op::BlockBroadcast { .. } => "block_broadcast",
            Op::SoftmaxRows => "softmax_rows",
            Op::Concat(_) => "concat",
            Op::Slice { .. } => "slice",
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(v: f64) -> f64 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Forward value of `op` applied to `x`. Panics on malformed shapes.
pub(crate) fn compute(op: &Op, x: &[&Tensor]) -> Tensor {
    match *op {
        Op::Leaf { .. } => unreachable!("leaves carry their own value"),
        Op::MatMul { ta, tb, blocks } => matmul_blocks(x[0], x[1], ta, tb, blocks),
        Op::Add => x[0].zip_map(x[1], |a, b| a + b),
        Op::Sub => x[0].zip_map(x[1], |a, b| a - b),
        Op::Mul => x[0].zip_map(x[1], |a, b| a * b),
        Op::Scale(c) => x[0].map(|v| c * v),
        Op::AddScalar(c) => x[0].map(|v| v + c),
        Op::Transpose => x[0].transpose(),
        Op::BlockTranspose { blocks } => {
            let (r, c) = x[0].dims2();
            assert!(
                r % blocks == 0,
                "block_transpose: {r} rows into {blocks} blocks"
            );
            let m = r / blocks;
            let mut data = Vec::with_capacity(r * c);
            for b in 0..blocks {
                let base = b * m * c;
                for j in 0..c {
                    for i in 0..m {
                        data.push(x[0].data()[base + i * c + j]);
                    }
                }
            }
            Tensor::matrix(blocks * c, m, data)
        }
        Op::Reshape { rows, cols } => {
            assert_eq!(
                rows * cols,
                x[0].len(),
                "reshape to {rows}x{cols} from {:?}",
                x[0].shape()
            );
            Tensor::matrix(rows, cols, x[0].data().to_vec())
        }
        Op::Relu => x[0].map(|v| if v > 0.0 { v } else { 0.0 }),
        Op::LeakyRelu(s) => x[0].map(|v| if v > 0.0 { v } else { s * v }),
        Op::ReluMask => x[0].zip_map(x[1], |g, v| if v > 0.0 { g } else { 0.0 }),
        Op::LeakyMask(s) => x[0].zip_map(x[1], |g, v| if v > 0.0 { g } else { s * g }),
        Op::SignMul => x[0].zip_map(x[1], |g, v| g * sign(v)),
        Op::Sigmoid => x[0].map(sigmoid),
        Op::Tanh => x[0].map(f64::tanh),
        Op::Softplus => x[0].map(softplus),
        Op::Exp => x[0].map(f64::exp),
        Op::Log => x[0].map(f64::ln),
        Op::Abs => x[0].map(f64::abs),
        Op::Powf(p) => x[0].map(|v| v.powf(p)),
        Op::Sum => Tensor::scalar(x[0].sum()),
        Op::SumRows => {
            let (m, n) = x[0].dims2();
            let mut out = vec![0.0; n];
            for i in 0..m {
                for (o, v) in out.iter_mut().zip(x[0].row(i)) {
                    *o += v;
                }
            }
            Tensor::matrix(1, n, out)
        }
        Op::SumCols => {
            let (m, _) = x[0].dims2();
            Tensor::matrix(m, 1, (0..m).map(|i| x[0].row(i).iter().sum()).collect())
        }
        Op::BlockSumRows { blocks } => {
            let (r, n) = x[0].dims2();
            assert!(
                r % blocks == 0,
                "block_sum_rows: {r} rows into {blocks} blocks"
            );
            let m = r / blocks;
            let mut out = vec![0.0; blocks * n];
            for b in 0..blocks {
                let dst = &mut out[b * n..(b + 1) * n];
                for i in 0..m {
                    for (o, v) in dst.iter_mut().zip(x[0].row(b * m + i)) {
                        *o += v;
                    }
                }
            }
            Tensor::matrix(blocks, n, out)
        }
        Op::Broadcast { rows, cols } => {
            let (m, n) = x[0].dims2();
            let src = x[0].data();
            let data = match (m, n) {
                (1, 1) => vec![src[0]; rows * cols],
                (1, c) if c == cols => (0..rows).flat_map(|_| src.iter().copied()).collect(),
                (r, 1) if r == rows => src
                    .iter()
                    .flat_map(|&v| std::iter::repeat_n(v, cols))
                    .collect(),
                _ => panic!("cannot broadcast [{m}, {n}] to [{rows}, {cols}]"),
            };
            Tensor::matrix(rows, cols, data)
        }
        Op::BlockBroadcast { rep } => {
            let (b, n) = x[0].dims2();
            let mut data = Vec::with_capacity(b * rep * n);
            for i in 0..b {
                for _ in 0..rep {
                    data.extend_from_slice(x[0].row(i));
                }
            }
            Tensor::matrix(b * rep, n, data)
        }
        Op::SoftmaxRows => {
            let (m, n) = x[0].dims2();
            let mut data = Vec::with_capacity(m * n);
            for i in 0..m {
                let row = x[0].row(i);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let start = data.len();
                let mut z = 0.0;
                for &v in row {
                    let e = (v - max).exp();
                    z += e;
                    data.push(e);
                }
                for v in &mut data[start..] {
                    *v /= z;
                }
            }
            Tensor::matrix(m, n, data)
        }
        Op::Concat(axis) => concat(x, axis),
        Op::Slice { axis, start, len } => {
            let (m, n) = x[0].dims2();
            match axis {
                Axis::Rows => {
                    assert!(start + len <= m, "row slice out of range");
                    Tensor::matrix(len, n, x[0].data()[start * n..(start + len) * n].to_vec())
                }
                Axis::Cols => {
                    assert!(start + len <= n, "column slice out of range");
                    let mut data = Vec::with_capacity(m * len);
                    for i in 0..m {
                        data.extend_from_slice(&x[0].row(i)[start..start + len]);
                    }
                    Tensor::matrix(m, len, data)
                }
            }
        }
    }
}

fn concat(x: &[&Tensor], axis: Axis) -> Tensor {
    assert!(!x.is_empty(), "concat of nothing");
    match axis {
        Axis::Rows => {
            let n = x[0].cols();
            let mut rows = 0;
            let mut data = Vec::new();
            for t in x {
                assert_eq!(t.cols(), n, "row concat needs equal column counts");
                rows += t.rows();
                data.extend_from_slice(t.data());
            }
            Tensor::matrix(rows, n, data)
        }
        Axis::Cols => {
            let m = x[0].rows();
            let cols: usize = x.iter().map(|t| t.cols()).sum();
            let mut data = Vec::with_capacity(m * cols);
            for i in 0..m {
                for t in x {
                    assert_eq!(t.rows(), m, "column concat needs equal row counts");
                    data.extend_from_slice(t.row(i));
                }
            }
            Tensor::matrix(m, cols, data)
        }
    }
}

//! Atlas transforms that map `N`-node networks onto an `M`-node template.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{BrainNetwork, Dataset};
use crate::autodiff::{Bindings, Tape, Var};
use crate::error::{Error, Result};
use crate::params::{glorot, ParameterSet};
use crate::tensor::{matmul_blocks, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum AtlasKind {
    #[serde(rename = "zero-pad")]
    ZeroPad,
    #[serde(rename = "lp")]
    LinearProjection,
    #[serde(rename = "ae")]
    Autoencoder,
}

impl AtlasKind {
    pub fn tag(self) -> &'static str {
        match self {
            AtlasKind::ZeroPad => "zero-pad",
            AtlasKind::LinearProjection => "lp",
            AtlasKind::Autoencoder => "ae",
        }
    }
}

impl std::str::FromStr for AtlasKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero-pad" | "zeropad" | "pad" => Ok(AtlasKind::ZeroPad),
            "lp" | "linear-projection" => Ok(AtlasKind::LinearProjection),
            "ae" | "autoencoder" => Ok(AtlasKind::Autoencoder),
            other => Err(Error::Invalid(format!("unknown atlas kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AtlasTransform {
    pub kind: AtlasKind,
    pub source_dim: usize,
    pub target_dim: usize,
    /// `w` for projections; the encoder half (`ae.enc.w`, `ae.enc.b`) for
    /// autoencoders; empty for zero padding.
    pub params: ParameterSet,
}

impl AtlasTransform {
    pub fn zero_pad(source_dim: usize, target_dim: usize) -> Result<Self> {
        if source_dim > target_dim {
            return Err(Error::Invalid(format!(
                "cannot zero-pad {source_dim} nodes down to {target_dim}"
            )));
        }
        Ok(AtlasTransform {
            kind: AtlasKind::ZeroPad,
            source_dim,
            target_dim,
            params: ParameterSet::new(),
        })
    }

    pub fn projection(w: Tensor) -> Self {
        let (n, m) = w.dims2();
        AtlasTransform {
            kind: AtlasKind::LinearProjection,
            source_dim: n,
            target_dim: m,
            params: ParameterSet::new().with("w", w, 0),
        }
    }

    pub fn apply(&self, net: &BrainNetwork) -> Result<BrainNetwork> {
        if net.node_count() != self.source_dim {
            return Err(Error::Shape(format!(
                "atlas transform expects {} nodes, network has {}",
                self.source_dim,
                net.node_count()
            )));
        }
        match self.kind {
            AtlasKind::ZeroPad => zero_pad(net, self.target_dim),
            AtlasKind::LinearProjection => linear_project(net, self.params.require("w")?),
            AtlasKind::Autoencoder => {
                let tape = Tape::new();
                let p = Bindings::inputs(&tape, &self.params);
                let z = encode(&p, tape.constant(net.adjacency().clone()));
                tape.check_finite()?;
                BrainNetwork::new(z.value(), net.label())
            }
        }
    }

    pub fn apply_dataset(&self, ds: &Dataset) -> Result<Dataset> {
        ds.map_subjects(|s| self.apply(s))
    }
}

/// Embeds `net` in the top-left corner of an `m × m` zero matrix.
pub fn zero_pad(net: &BrainNetwork, m: usize) -> Result<BrainNetwork> {
    let n = net.node_count();
    if n > m {
        return Err(Error::Shape(format!("cannot zero-pad {n} nodes to {m}")));
    }
    let mut out = Tensor::zeros(m, m);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, net.adjacency().get(i, j));
        }
    }
    BrainNetwork::new(out, net.label())
}

/// `sym(Wᵀ A W)` where `sym(B) = (B + Bᵀ) / 2`.
pub fn linear_project(net: &BrainNetwork, w: &Tensor) -> Result<BrainNetwork> {
    let n = net.node_count();
    if w.rank() != 2 || w.rows() != n {
        return Err(Error::Shape(format!(
            "projection {:?} does not match {n} nodes",
            w.shape()
        )));
    }
    let b = matmul_blocks(w, net.adjacency(), true, false, 1).matmul(w);
    let sym = b.zip_map(&b.transpose(), |x, y| (x + y) * 0.5);
    BrainNetwork::new(sym, net.label())
}

/// Differentiable form of [`linear_project`] for joint training.
pub fn linear_project_var<'t>(a: Var<'t>, w: Var<'t>) -> Var<'t> {
    let b = w.mm(a.matmul(w), true, false, 1);
    (b + b.t()).scale(0.5)
}

#[derive(Clone, Debug)]
pub struct AutoencoderConfig {
    pub target_dim: usize,
    pub epochs: usize,
    /// Step size on the reconstruction gradient.
    pub lr: f64,
    /// Multiplicative decay applied to the parameters before each step.
    pub decay: f64,
    pub seed: u64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        AutoencoderConfig {
            target_dim: 2,
            epochs: 500,
            lr: 0.05,
            decay: 1.0,
            seed: 0,
        }
    }
}

fn sym(x: Var<'_>) -> Var<'_> {
    (x + x.t()).scale(0.5)
}

/// `N×N → M×M`: the row map `r ↦ tanh(r·E + c)` applied to rows, then to
/// the columns of the result, then symmetrised.
fn encode<'t>(p: &Bindings<'t>, x: Var<'t>) -> Var<'t> {
    let (e, c) = (p.get("ae.enc.w"), p.get("ae.enc.b"));
    let m = e.dims().1;
    let n = x.dims().0;
    let h = (x.matmul(e) + c.broadcast(n, m)).tanh();
    let r = (h.mm(e, true, false, 1) + c.broadcast(m, m)).tanh();
    sym(r)
}

/// `M×M → N×N`: `tanh` row map, then a linear column map, symmetrised.
fn decode<'t>(p: &Bindings<'t>, z: Var<'t>) -> Var<'t> {
    let (d, b) = (p.get("ae.dec.w"), p.get("ae.dec.b"));
    let (m, n) = d.dims();
    debug_assert_eq!(z.dims(), (m, m));
    let v = (z.matmul(d) + b.broadcast(m, n)).tanh();
    sym(v.mm(d, true, false, 1) + b.broadcast(n, n))
}

/// Bottleneck and reconstruction of `x` under full autoencoder parameters.
pub fn autoencoder_forward<'t>(p: &Bindings<'t>, x: Var<'t>) -> (Var<'t>, Var<'t>) {
    let z = encode(p, x);
    (z, decode(p, z))
}

fn init_autoencoder(n: usize, m: usize, seed: u64) -> ParameterSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ParameterSet::new()
        .with("ae.enc.w", glorot(&mut rng, n, m), 0)
        .with("ae.enc.b", Tensor::zeros(1, m), 0)
        .with("ae.dec.w", glorot(&mut rng, m, n), 1)
        .with("ae.dec.b", Tensor::zeros(1, n), 1)
}

/// Mean reconstruction error over all subjects.
fn reconstruction_loss<'t>(tape: &'t Tape, p: &Bindings<'t>, xs: &[&Tensor]) -> Var<'t> {
    let mut total: Option<Var<'t>> = None;
    for x in xs {
        let xv = tape.constant((*x).clone());
        let (_, xhat) = autoencoder_forward(p, xv);
        let diff = xv - xhat;
        let l = (diff * diff).mean();
        total = Some(match total {
            None => l,
            Some(t) => t + l,
        });
    }
    total.expect("non-empty").scale(1.0 / xs.len() as f64)
}

/// Full-batch training of the atlas autoencoder with
/// `λ ← decay·λ − lr·∇L_MSE(λ)`. Returns the encoder-only transform and the
/// loss recorded at the start of every epoch.
pub fn train_autoencoder(
    datasets: &[&Dataset],
    cfg: &AutoencoderConfig,
) -> Result<(AtlasTransform, Vec<f64>)> {
    if cfg.target_dim == 0 {
        return Err(Error::Invalid(
            "autoencoder target dimension must be positive".into(),
        ));
    }
    let xs: Vec<&Tensor> = datasets
        .iter()
        .flat_map(|d| d.subjects().iter().map(|s| s.adjacency()))
        .collect();
    let Some(first) = xs.first() else {
        return Err(Error::Invalid(
            "autoencoder needs at least one subject".into(),
        ));
    };
    let n = first.rows();
    if xs.iter().any(|x| x.rows() != n) {
        return Err(Error::Shape(
            "autoencoder inputs must share one node count".into(),
        ));
    }
    let mut params = init_autoencoder(n, cfg.target_dim, cfg.seed);
    let mut losses = Vec::with_capacity(cfg.epochs + 1);
    for _ in 0..cfg.epochs {
        let tape = Tape::new();
        let b = Bindings::params(&tape, &params);
        let loss = reconstruction_loss(&tape, &b, &xs);
        let grads = tape.grad(loss, b.vars(), false)?;
        tape.check_finite()?;
        losses.push(loss.item());
        for (k, g) in grads.iter().enumerate() {
            let g = g.value();
            let t = params.tensor_at_mut(k);
            for (v, gv) in t.data_mut().iter_mut().zip(g.data()) {
                *v = cfg.decay * *v - cfg.lr * gv;
            }
        }
    }
    losses.push(reconstruction_mse(&params, &xs)?);
    let transform = AtlasTransform {
        kind: AtlasKind::Autoencoder,
        source_dim: n,
        target_dim: cfg.target_dim,
        params: params.sub_set(&["ae.enc.w", "ae.enc.b"])?,
    };
    Ok((transform, losses))
}

fn reconstruction_mse(params: &ParameterSet, xs: &[&Tensor]) -> Result<f64> {
    let tape = Tape::new();
    let b = Bindings::inputs(&tape, params);
    let l = reconstruction_loss(&tape, &b, xs);
    tape.check_finite()?;
    Ok(l.item())
}

/// `(1/n)·Σ(xᵢⱼ − x̂ᵢⱼ)²` over all `n` entries.
pub fn mse(x: &Tensor, xhat: &Tensor) -> f64 {
    x.data()
        .iter()
        .zip(xhat.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net(rows: &[&[f64]]) -> BrainNetwork {
        BrainNetwork::new(Tensor::from_rows(rows), 1).unwrap()
    }

    #[test]
    fn zero_pad_examples() {
        let p = zero_pad(&net(&[&[1.0]]), 2).unwrap();
        assert_eq!(p.adjacency().data(), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(p.label(), 1);
        let a = net(&[&[0.0, 0.5], &[0.5, 0.0]]);
        assert_eq!(zero_pad(&a, 2).unwrap(), a);
        assert!(zero_pad(&a, 1).is_err());
    }

    #[test]
    fn zero_pad_preserves_edge_set() {
        let a = net(&[&[0.0, 0.5, 0.0], &[0.5, 0.0, -0.2], &[0.0, -0.2, 0.0]]);
        let p = zero_pad(&a, 5).unwrap();
        let edges = |n: &BrainNetwork| {
            let m = n.node_count();
            (0..m)
                .flat_map(|i| (0..m).map(move |j| (i, j)))
                .filter(|&(i, j)| n.adjacency().get(i, j) != 0.0)
                .collect::<Vec<_>>()
        };
        assert_eq!(edges(&a), edges(&p));
    }

    #[test]
    fn projection_examples() {
        let a = net(&[&[0.0, 1.0], &[1.0, 0.0]]);
        assert_eq!(linear_project(&a, &Tensor::identity(2)).unwrap(), a);
        let z = linear_project(&a, &Tensor::zeros(2, 3)).unwrap();
        assert!(z.adjacency().data().iter().all(|&v| v == 0.0));
        let w = Tensor::from_rows(&[&[1.0], &[1.0]]);
        assert_eq!(linear_project(&a, &w).unwrap().adjacency().data(), &[2.0]);
        assert!(linear_project(&a, &Tensor::zeros(3, 1)).is_err());
    }

    #[test]
    fn projection_var_matches_tensor_path() {
        let a = net(&[&[0.1, 0.4, -0.3], &[0.4, 0.0, 0.2], &[-0.3, 0.2, 0.5]]);
        let w = Tensor::from_rows(&[&[0.3, -0.1], &[0.7, 0.2], &[-0.5, 0.9]]);
        let tape = Tape::new();
        let v = linear_project_var(
            tape.constant(a.adjacency().clone()),
            tape.constant(w.clone()),
        );
        let direct = linear_project(&a, &w).unwrap();
        assert!(v.value().max_abs_diff(direct.adjacency()) < 1e-15);
    }

    #[test]
    fn transform_delegation_and_errors() {
        let a = net(&[&[0.0, 0.5], &[0.5, 0.0]]);
        let t = AtlasTransform::zero_pad(2, 4).unwrap();
        assert_eq!(t.apply(&a).unwrap(), zero_pad(&a, 4).unwrap());
        assert!(t.apply(&net(&[&[1.0]])).is_err());
        assert!(AtlasTransform::zero_pad(5, 4).is_err());
        let id = AtlasTransform::projection(Tensor::identity(2));
        assert_eq!(id.apply(&a).unwrap(), a);
    }

    #[test]
    fn mse_examples() {
        let x = Tensor::from_rows(&[&[1.0]]);
        assert_eq!(mse(&x, &x), 0.0);
        assert_eq!(mse(&x, &Tensor::zeros(1, 1)), 1.0);
    }

    #[test]
    fn autoencoder_output_is_frozen_and_symmetric() {
        let a = net(&[&[0.0, 0.5, 0.1], &[0.5, 0.0, -0.4], &[0.1, -0.4, 0.0]]);
        let b = BrainNetwork::new(
            Tensor::from_rows(&[&[0.2, 0.1, 0.0], &[0.1, 0.0, 0.3], &[0.0, 0.3, 0.1]]),
            0,
        )
        .unwrap();
        let ds = Dataset::new("toy", "fmri", vec![a.clone(), b]).unwrap();
        let cfg = AutoencoderConfig {
            target_dim: 2,
            epochs: 20,
            lr: 0.1,
            decay: 1.0,
            seed: 1,
        };
        let (t, losses) = train_autoencoder(&[&ds], &cfg).unwrap();
        assert_eq!(losses.len(), 21);
        assert_eq!(t.params.len(), 2);
        let z1 = t.apply(&a).unwrap();
        let z2 = t.apply(&a).unwrap();
        assert_eq!(z1.node_count(), 2);
        let bits = |n: &BrainNetwork| {
            n.adjacency()
                .data()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&z1), bits(&z2));
    }

    #[test]
    fn autoencoder_rejects_bad_config() {
        let ds = Dataset::new(
            "toy",
            "fmri",
            vec![
                net(&[&[1.0]]),
                BrainNetwork::new(Tensor::from_rows(&[&[0.0]]), 0).unwrap(),
            ],
        )
        .unwrap();
        let cfg = AutoencoderConfig {
            target_dim: 0,
            ..Default::default()
        };
        assert!(train_autoencoder(&[&ds], &cfg).is_err());
        assert!(train_autoencoder(&[], &AutoencoderConfig::default()).is_err());
    }
}

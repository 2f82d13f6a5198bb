use std::fmt::Write as _;

use crate::autodiff::{grads_to_params, Bindings, Tape, Var};
use crate::data::Dataset;
use crate::encoders::{EncoderConfig, GraphBatch};
use crate::error::{Error, Result};
use crate::parallel::par_map;
use crate::params::ParameterSet;
use crate::strategies::{train_dsl, TrainConfig};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TaskEmbedding {
    pub name: String,
    pub vector: Vec<f64>,
}

/// Closed-form Bernoulli Fisher diagonal
/// `F_j = (1/N) Σ_i p_i (1 − p_i) (∂z_i/∂θ_j)²`, where `logit(tape, θ, i)`
/// records sample `i`'s logit `z_i` and `p_i = σ(z_i)`.
pub fn fisher_diagonal(
    params: &ParameterSet,
    samples: usize,
    logit: impl for<'t> Fn(&'t Tape, &Bindings<'t>, usize) -> Var<'t> + Sync + Send,
) -> Result<ParameterSet> {
    if samples == 0 {
        return Err(Error::Invalid("Fisher estimate over no samples".into()));
    }
    let idx: Vec<usize> = (0..samples).collect();
    let parts = par_map(&idx, |&i| -> Result<ParameterSet> {
        let tape = Tape::new();
        let p = Bindings::params(&tape, params);
        let z = logit(&tape, &p, i);
        let g = tape.grad(z, p.vars(), false)?;
        let s = z.sigmoid().item();
        tape.check_finite()?;
        let w = s * (1.0 - s) / samples as f64;
        Ok(grads_to_params(&p, &g).map(|t| t.map(|v| w * v * v)))
    });
    let mut out = params.zeros_like();
    for part in parts {
        let f = part?;
        for (acc, v) in out.iter_mut().zip(f.iter()) {
            for (a, b) in acc.tensor.data_mut().iter_mut().zip(v.tensor.data()) {
                *a += b;
            }
        }
    }
    Ok(out)
}

/// Trains `probe` on the whole task, then flattens its Fisher diagonal in
/// parameter (layer) order.
pub fn fisher_task_embedding(
    probe: &EncoderConfig,
    task: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TaskEmbedding> {
    let trained = train_dsl(probe, task, cfg, seed)?;
    if let Some(l) = trained.losses.iter().find(|l| !l.is_finite()) {
        return Err(Error::NonFinite(format!("probe training loss {l}")));
    }
    let nets = task.subjects();
    let fisher = fisher_diagonal(&trained.params, nets.len(), |tape, p, i| {
        probe.logits(p, &GraphBatch::from_networks(tape, &[&nets[i]]))
    })?;
    Ok(TaskEmbedding {
        name: task.task_name(),
        vector: fisher.flatten(),
    })
}

/// Cosine similarities between embeddings.
pub fn task_similarity_matrix(embeddings: &[TaskEmbedding]) -> Result<Tensor> {
    let n = embeddings.len();
    let Some(first) = embeddings.first() else {
        return Err(Error::Invalid("no embeddings".into()));
    };
    let len = first.vector.len();
    let mut norms = Vec::with_capacity(n);
    for e in embeddings {
        if e.vector.len() != len {
            return Err(Error::Shape(format!(
                "embedding `{}` has length {}, expected {len}",
                e.name,
                e.vector.len()
            )));
        }
        let norm = e.vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Invalid(format!(
                "embedding `{}` has norm {norm}",
                e.name
            )));
        }
        norms.push(norm);
    }
    let mut s = Tensor::zeros(n, n);
    for i in 0..n {
        s.set(i, i, 1.0);
        for j in i + 1..n {
            let dot: f64 = embeddings[i]
                .vector
                .iter()
                .zip(&embeddings[j].vector)
                .map(|(a, b)| a * b)
                .sum();
            let c = (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            s.set(i, j, c);
            s.set(j, i, c);
        }
    }
    Ok(s)
}

/// CSV with a header row and a leading column of task names.
pub fn similarity_csv(names: &[String], s: &Tensor) -> String {
    let mut out = String::from("task");
    for n in names {
        write!(out, ",{n}").expect("write to string");
    }
    out.push('\n');
    for (i, n) in names.iter().enumerate() {
        out.push_str(n);
        for v in s.row(i) {
            write!(out, ",{v}").expect("write to string");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn emb(name: &str, v: &[f64]) -> TaskEmbedding {
        TaskEmbedding {
            name: name.into(),
            vector: v.to_vec(),
        }
    }

    #[test]
    fn logistic_unit_fisher() {
        let (w, x) = (0.7, -1.3);
        let params = ParameterSet::new().with("w", Tensor::scalar(w), 0).with(
            "dead",
            Tensor::scalar(2.0),
            0,
        );
        let f = fisher_diagonal(&params, 1, |tape, p, _| {
            p.get("w") * tape.scalar(x) + p.get("dead").scale(0.0)
        })
        .unwrap();
        let s = 1.0 / (1.0 + (-w * x).exp());
        assert_abs_diff_eq!(
            f.get("w").unwrap().item(),
            s * (1.0 - s) * x * x,
            epsilon = 1e-15
        );
        assert_eq!(f.get("dead").unwrap().item(), 0.0);
    }

    #[test]
    fn similarity_examples() {
        let s = task_similarity_matrix(&[
            emb("a", &[1.0, 1.0]),
            emb("b", &[1.0, 0.0]),
            emb("c", &[0.0, 3.0]),
        ])
        .unwrap();
        assert_eq!(s.get(0, 0), 1.0);
        assert_abs_diff_eq!(s.get(0, 1), 0.70711, epsilon = 5e-6);
        assert_eq!(s.get(1, 2), 0.0);
        assert_eq!(s.get(2, 1), s.get(1, 2));
        assert!(task_similarity_matrix(&[emb("z", &[0.0, 0.0])]).is_err());
        assert!(task_similarity_matrix(&[emb("a", &[1.0]), emb("b", &[1.0, 2.0])]).is_err());
    }

    #[test]
    fn csv_layout() {
        let s = Tensor::from_rows(&[&[1.0, 0.5], &[0.5, 1.0]]);
        let csv = similarity_csv(&["x/fmri".into(), "y/dti".into()], &s);
        assert_eq!(csv, "task,x/fmri,y/dti\nx/fmri,1,0.5\ny/dti,0.5,1\n");
    }
}

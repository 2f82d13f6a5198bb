use rand::Rng;

use super::{accumulate, stream_rng, streams, PreparedTask, Schedule, SourcePool};
use crate::autodiff::{grads_to_params, Axis, Bindings, Tape, Var};
use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::optim::{CosineSchedule, OptimState};
use crate::parallel::par_map;
use crate::params::{glorot, ParameterSet};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct MetaConfig {
    /// β: inner-loop SGD step.
    pub inner_lr: f64,
    /// α: peak outer learning rate.
    pub outer_lr: f64,
    pub outer_lr_min: f64,
    pub weight_decay: f64,
    pub support_size: usize,
    pub query_size: usize,
    pub inner_steps: usize,
    pub meta_epochs: usize,
    pub second_order: bool,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            inner_lr: 0.01,
            outer_lr: 1e-3,
            outer_lr_min: 1e-4,
            weight_decay: 1e-4,
            support_size: 16,
            query_size: 16,
            inner_steps: 1,
            meta_epochs: 150,
            second_order: true,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.support_size == 0 || self.query_size == 0 || self.inner_steps == 0 {
            return Err(Error::Invalid(
                "support, query and inner steps must be at least 1".into(),
            ));
        }
        if !(self.inner_lr >= 0.0 && self.outer_lr > 0.0 && self.outer_lr_min > 0.0) {
            return Err(Error::Invalid(
                "meta learning rates must be positive".into(),
            ));
        }
        Ok(())
    }

    fn cosine(&self, steps: usize) -> Result<CosineSchedule> {
        CosineSchedule::new(self.outer_lr, self.outer_lr_min, steps.max(1))
    }

    fn schedule(&self, sources: &SourcePool, seed: u64) -> Result<Schedule> {
        let sizes: Vec<usize> = sources.tasks.iter().map(|t| t.dataset.len()).collect();
        Schedule::episodic(
            &sizes,
            self.support_size,
            self.query_size,
            self.meta_epochs,
            &mut stream_rng(seed, streams::SCHEDULE),
        )
    }
}

/// Two-layer perceptron mapping the learning state `ρ` (length `2L`) to
/// per-layer step sizes `α` and weight multipliers `β`.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperparamGenerator {
    pub params: ParameterSet,
    pub layers: usize,
    /// Added to the raw `α` outputs.
    pub alpha_bias: f64,
    /// Added to the raw `β` outputs.
    pub beta_bias: f64,
}

impl HyperparamGenerator {
    /// Hidden weights Glorot, output weights scaled down so that the
    /// initial outputs sit close to `(alpha_bias, 1)`.
    pub fn new<R: Rng + ?Sized>(layers: usize, alpha_bias: f64, rng: &mut R) -> Self {
        let d = 2 * layers;
        let w2 = glorot(rng, d, d).map(|v| 1e-3 * v);
        let params = ParameterSet::new()
            .with("gen.w1", glorot(rng, d, d), 0)
            .with("gen.b1", Tensor::zeros(1, d), 0)
            .with("gen.w2", w2, 1)
            .with("gen.b2", Tensor::zeros(1, d), 1);
        HyperparamGenerator {
            params,
            layers,
            alpha_bias,
            beta_bias: 1.0,
        }
    }

    /// All-zero weights: outputs are exactly `(alpha_bias, beta_bias)`.
    pub fn constant(layers: usize, alpha_bias: f64) -> Self {
        let d = 2 * layers;
        let params = ParameterSet::new()
            .with("gen.w1", Tensor::zeros(d, d), 0)
            .with("gen.b1", Tensor::zeros(1, d), 0)
            .with("gen.w2", Tensor::zeros(d, d), 1)
            .with("gen.b2", Tensor::zeros(1, d), 1);
        HyperparamGenerator {
            params,
            layers,
            alpha_bias,
            beta_bias: 1.0,
        }
    }

    /// Output `[1, 2L]`: the first `L` entries are `α`, the rest `β`.
    pub fn forward<'t>(&self, phi: &Bindings<'t>, rho: Var<'t>) -> Var<'t> {
        let d = 2 * self.layers;
        let h = (rho.matmul(phi.get("gen.w1")) + phi.get("gen.b1")).relu();
        let mut bias = vec![self.alpha_bias; d];
        bias[self.layers..].fill(self.beta_bias);
        let offset = rho.tape().constant(Tensor::matrix(1, d, bias));
        h.matmul(phi.get("gen.w2")) + phi.get("gen.b2") + offset
    }
}

/// `(α, β)` for a learning state given as plain values.
pub fn generate_hyperparams(g: &HyperparamGenerator, rho: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if rho.len() != 2 * g.layers {
        return Err(Error::Shape(format!(
            "learning state has {} entries, generator expects {}",
            rho.len(),
            2 * g.layers
        )));
    }
    let tape = Tape::new();
    let phi = Bindings::inputs(&tape, &g.params);
    let out = g.forward(
        &phi,
        tape.constant(Tensor::matrix(1, rho.len(), rho.to_vec())),
    );
    tape.check_finite()?;
    let v = out.value().into_data();
    Ok((v[..g.layers].to_vec(), v[g.layers..].to_vec()))
}

/// `[1, 2L]`: per-layer mean parameter value, then per-layer mean gradient.
fn learning_state_var<'t>(theta: &Bindings<'t>, grads: &[Var<'t>]) -> Var<'t> {
    let layers = theta.layers().iter().max().map_or(0, |&l| l + 1);
    let tape = theta.vars()[0].tape();
    let layer_mean = |vals: &[Var<'t>], l: usize| -> Var<'t> {
        let mut acc: Option<Var<'t>> = None;
        let mut count = 0usize;
        for (v, &layer) in vals.iter().zip(theta.layers()) {
            if layer == l {
                let (r, c) = v.dims();
                count += r * c;
                let s = v.sum();
                acc = Some(match acc {
                    None => s,
                    Some(a) => a + s,
                });
            }
        }
        match acc {
            Some(a) => a.scale(1.0 / count as f64),
            None => tape.scalar(0.0),
        }
    };
    let mut parts: Vec<Var<'t>> = (0..layers).map(|l| layer_mean(theta.vars(), l)).collect();
    parts.extend((0..layers).map(|l| layer_mean(grads, l)));
    Var::concat(&parts, Axis::Cols)
}

/// Learning state of `params` with gradient `grads`, as values.
pub fn learning_state(params: &ParameterSet, grads: &ParameterSet) -> Result<Vec<f64>> {
    params.check_layout(grads)?;
    let tape = Tape::new();
    let p = Bindings::inputs(&tape, params);
    let g = Bindings::inputs(&tape, grads);
    Ok(learning_state_var(&p, g.vars()).value().into_data())
}

/// How the inner loop turns `(θ, ∇)` into fast weights.
#[derive(Clone, Copy)]
enum InnerRule<'a, 't> {
    /// `θ − β∇`.
    Fixed(f64),
    /// `β_ℓ·θ_ℓ − α_ℓ·∇_ℓ` with `(α, β)` from the generator.
    Generated(&'a HyperparamGenerator, &'a Bindings<'t>),
}

fn adapt<'t>(
    enc: &EncoderConfig,
    task: &PreparedTask,
    tape: &'t Tape,
    theta: &Bindings<'t>,
    support: &[usize],
    mc: &MetaConfig,
    rule: InnerRule<'_, 't>,
) -> Result<Bindings<'t>> {
    let mut fast = theta.clone();
    for _ in 0..mc.inner_steps {
        let loss = task.loss(enc, tape, &fast, support)?;
        let g = tape.grad(loss, fast.vars(), mc.second_order)?;
        let next: Vec<Var<'t>> = match rule {
            InnerRule::Fixed(beta) => fast
                .vars()
                .iter()
                .zip(&g)
                .map(|(&v, &g)| v - g.scale(beta))
                .collect(),
            InnerRule::Generated(gen, phi) => {
                let out = gen.forward(phi, learning_state_var(&fast, &g));
                let l_count = gen.layers;
                fast.vars()
                    .iter()
                    .zip(&g)
                    .zip(fast.layers())
                    .map(|((&v, &g), &l)| {
                        let (r, c) = v.dims();
                        let alpha = out.slice(Axis::Cols, l, 1).broadcast(r, c);
                        let beta = out.slice(Axis::Cols, l_count + l, 1).broadcast(r, c);
                        beta * v - alpha * g
                    })
                    .collect()
            }
        };
        fast = fast.replace(next);
    }
    Ok(fast)
}

/// Query loss after adaptation, summed over tasks, and its gradients.
#[derive(Clone, Debug)]
pub struct MetaGradient {
    pub loss: f64,
    pub theta: ParameterSet,
    /// Present when a trainable generator took part.
    pub phi: Option<ParameterSet>,
}

/// Meta-gradient of one iteration. With `generator = Some((g, trainable))`
/// the inner step uses generated hyperparameters.
pub fn meta_gradient(
    enc: &EncoderConfig,
    theta: &ParameterSet,
    generator: Option<(&HyperparamGenerator, bool)>,
    tasks: &[PreparedTask],
    batches: &[super::Batch],
    mc: &MetaConfig,
) -> Result<MetaGradient> {
    if tasks.len() != batches.len() {
        return Err(Error::Invalid(format!(
            "{} tasks but {} batches",
            tasks.len(),
            batches.len()
        )));
    }
    if let Some((g, _)) = generator {
        if g.layers != theta.layer_count() {
            return Err(Error::Shape(format!(
                "generator for {} layers, model has {}",
                g.layers,
                theta.layer_count()
            )));
        }
    }
    let idx: Vec<usize> = (0..tasks.len()).collect();
    let parts = par_map(
        &idx,
        |&t| -> Result<(f64, ParameterSet, Option<ParameterSet>)> {
            let tape = Tape::new();
            let th = Bindings::params(&tape, theta);
            let phi = generator.map(|(g, trainable)| {
                if trainable {
                    Bindings::params(&tape, &g.params)
                } else {
                    Bindings::inputs(&tape, &g.params)
                }
            });
            let rule = match (generator, &phi) {
                (Some((g, _)), Some(phi)) => InnerRule::Generated(g, phi),
                _ => InnerRule::Fixed(mc.inner_lr),
            };
            let fast = adapt(enc, &tasks[t], &tape, &th, &batches[t].support, mc, rule)?;
            let loss = tasks[t].loss(enc, &tape, &fast, &batches[t].query)?;
            let trainable_phi = match (generator, &phi) {
                (Some((_, true)), Some(phi)) => Some(phi),
                _ => None,
            };
            let mut wrt: Vec<Var<'_>> = th.vars().to_vec();
            if let Some(phi) = trainable_phi {
                wrt.extend_from_slice(phi.vars());
            }
            let grads = tape.grad(loss, &wrt, false)?;
            tape.check_finite()?;
            let n = th.len();
            let g_theta = grads_to_params(&th, &grads[..n]);
            let g_phi = trainable_phi.map(|phi| grads_to_params(phi, &grads[n..]));
            Ok((loss.item(), g_theta, g_phi))
        },
    );
    let mut out = MetaGradient {
        loss: 0.0,
        theta: theta.zeros_like(),
        phi: generator
            .filter(|(_, tr)| *tr)
            .map(|(g, _)| g.params.zeros_like()),
    };
    for part in parts {
        let (l, gt, gp) = part?;
        out.loss += l;
        accumulate(&mut out.theta, &gt);
        if let (Some(acc), Some(gp)) = (out.phi.as_mut(), gp) {
            accumulate(acc, &gp);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct MetaOutcome {
    pub params: ParameterSet,
    pub losses: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct MmarOutcome {
    pub params: ParameterSet,
    pub generator: HyperparamGenerator,
    pub losses: Vec<f64>,
}

/// MAML outer loop over a fixed schedule.
pub fn meta_train_mml_with(
    enc: &EncoderConfig,
    init: ParameterSet,
    tasks: &[PreparedTask],
    schedule: &Schedule,
    mc: &MetaConfig,
) -> Result<MetaOutcome> {
    mc.validate()?;
    let mut params = init;
    let cosine = mc.cosine(schedule.len())?;
    let mut opt = OptimState::adam(&params, mc.outer_lr, mc.weight_decay)?;
    let mut losses = Vec::with_capacity(schedule.len());
    for (t, batches) in schedule.iterations.iter().enumerate() {
        let g = meta_gradient(enc, &params, None, tasks, batches, mc)?;
        opt.lr = cosine.lr(t)?;
        opt.step(&mut params, &g.theta)?;
        losses.push(g.loss);
    }
    Ok(MetaOutcome { params, losses })
}

pub fn meta_train_mml(
    enc: &EncoderConfig,
    sources: &SourcePool,
    mc: &MetaConfig,
    seed: u64,
) -> Result<MetaOutcome> {
    mc.validate()?;
    if sources.is_empty() {
        return Err(Error::Invalid("empty source pool".into()));
    }
    let init = sources.init_params(enc, &mut stream_rng(seed, streams::INIT))?;
    let schedule = mc.schedule(sources, seed)?;
    meta_train_mml_with(enc, init, &sources.tasks, &schedule, mc)
}

/// MMAR outer loop: θ and (unless `freeze_generator`) φ are both updated
/// by Adam with peak learning rate `eta`.
pub fn meta_train_mmar_with(
    enc: &EncoderConfig,
    init: ParameterSet,
    generator: HyperparamGenerator,
    tasks: &[PreparedTask],
    schedule: &Schedule,
    mc: &MetaConfig,
    eta: f64,
    freeze_generator: bool,
) -> Result<MmarOutcome> {
    mc.validate()?;
    let mut params = init;
    let mut generator = generator;
    let cosine = mc.cosine(schedule.len())?.with_peak(eta);
    let mut opt = OptimState::adam(&params, eta, mc.weight_decay)?;
    let mut opt_phi = OptimState::adam(&generator.params, eta, mc.weight_decay)?;
    let mut losses = Vec::with_capacity(schedule.len());
    for (t, batches) in schedule.iterations.iter().enumerate() {
        let g = meta_gradient(
            enc,
            &params,
            Some((&generator, !freeze_generator)),
            tasks,
            batches,
            mc,
        )?;
        let lr = cosine.lr(t)?;
        opt.lr = lr;
        opt.step(&mut params, &g.theta)?;
        if let Some(gp) = &g.phi {
            opt_phi.lr = lr;
            opt_phi.step(&mut generator.params, gp)?;
        }
        losses.push(g.loss);
    }
    Ok(MmarOutcome {
        params,
        generator,
        losses,
    })
}

pub fn meta_train_mmar(
    enc: &EncoderConfig,
    sources: &SourcePool,
    mc: &MetaConfig,
    eta: f64,
    seed: u64,
) -> Result<MmarOutcome> {
    mc.validate()?;
    if sources.is_empty() {
        return Err(Error::Invalid("empty source pool".into()));
    }
    let init = sources.init_params(enc, &mut stream_rng(seed, streams::INIT))?;
    let generator = HyperparamGenerator::new(
        init.layer_count(),
        mc.inner_lr,
        &mut stream_rng(seed, streams::GENERATOR),
    );
    let schedule = mc.schedule(sources, seed)?;
    meta_train_mmar_with(
        enc,
        init,
        generator,
        &sources.tasks,
        &schedule,
        mc,
        eta,
        false,
    )
}

#[cfg(test)]
mod tests {
    use super::super::{train_mtt_with, Batch, TrainConfig};
    use super::*;
    use crate::autodiff::gradcheck::{central_difference, max_relative_error};
    use crate::data::{BrainNetwork, Dataset};
    use crate::encoders::EncoderKind;

    fn toy(name: &str, m: usize, n: usize, shift: f64, seed: u64) -> Dataset {
        let mut rng = stream_rng(seed, 77);
        let subjects = (0..n)
            .map(|i| {
                let label = (i % 2) as u8;
                let mut a = Tensor::zeros(m, m);
                for r in 0..m {
                    for c in r + 1..m {
                        let v = rng.random_range(0.0..0.5) + label as f64 * shift;
                        a.set(r, c, v);
                        a.set(c, r, v);
                    }
                }
                BrainNetwork::new(a, label).unwrap()
            })
            .collect();
        Dataset::new(name, "fmri", subjects).unwrap()
    }

    fn tiny() -> EncoderConfig {
        EncoderConfig::new(EncoderKind::Gcn)
            .with_hidden(&[3, 2])
            .with_head_hidden(2)
    }

    fn pool() -> SourcePool {
        SourcePool::direct(vec![
            toy("a", 4, 12, 0.3, 1),
            toy("b", 4, 12, 0.2, 2),
            toy("c", 4, 12, 0.4, 3),
        ])
        .unwrap()
    }

    fn small_mc() -> MetaConfig {
        MetaConfig {
            support_size: 3,
            query_size: 3,
            inner_lr: 0.3,
            meta_epochs: 2,
            ..MetaConfig::default()
        }
    }

    /// Zero biases with an all-dead hidden layer put head units exactly on
    /// the ReLU kink, where central differences are meaningless.
    fn off_kink(mut theta: ParameterSet) -> ParameterSet {
        *theta.get_mut("head.0.b").unwrap() = Tensor::matrix(1, 2, vec![0.05, 0.07]);
        theta
    }

    fn batches() -> Vec<Batch> {
        (0..3)
            .map(|t| Batch {
                support: vec![t, t + 3, t + 6],
                query: vec![t + 1, t + 4, t + 8],
            })
            .collect()
    }

    #[test]
    fn generator_examples() {
        let mut rng = stream_rng(0, 0);
        let g = HyperparamGenerator::new(5, 0.01, &mut rng);
        let (a, b) = generate_hyperparams(&g, &[0.0; 10]).unwrap();
        assert_eq!(a.len() + b.len(), 10);
        assert!(a.iter().all(|&v| v == 0.01));
        assert!(b.iter().all(|&v| v == 1.0));
        let (a, b) = generate_hyperparams(
            &g,
            &[0.3, -0.2, 0.1, 0.0, 0.5, 0.01, -0.03, 0.0, 0.02, 0.01],
        )
        .unwrap();
        assert!(a.iter().all(|&v| (v - 0.01).abs() < 2e-3));
        assert!(b.iter().all(|&v| (v - 1.0).abs() < 2e-3));
        assert!(generate_hyperparams(&g, &[0.0; 9]).is_err());
    }

    #[test]
    fn learning_state_layout() {
        let p = ParameterSet::new()
            .with("a", Tensor::from_rows(&[&[1.0, 3.0]]), 0)
            .with("b", Tensor::scalar(5.0), 0)
            .with("c", Tensor::scalar(-2.0), 1);
        let g = p.map(|t| t.map(|v| 10.0 * v));
        assert_eq!(
            learning_state(&p, &g).unwrap(),
            vec![3.0, -2.0, 30.0, -20.0]
        );
    }

    #[test]
    fn zero_beta_leaves_only_gradient_term() {
        let enc = tiny();
        let pool = pool();
        let theta = pool.init_params(&enc, &mut stream_rng(1, 1)).unwrap();
        let mut g = HyperparamGenerator::constant(theta.layer_count(), 0.05);
        g.beta_bias = 0.0;
        let support = [0, 1, 2, 3];
        let tape = Tape::new();
        let th = Bindings::params(&tape, &theta);
        let phi = Bindings::inputs(&tape, &g.params);
        let mc = MetaConfig {
            second_order: false,
            ..small_mc()
        };
        let fast = adapt(
            &enc,
            &pool.tasks[0],
            &tape,
            &th,
            &support,
            &mc,
            InnerRule::Generated(&g, &phi),
        )
        .unwrap();
        let loss = pool.tasks[0].loss(&enc, &tape, &th, &support).unwrap();
        let grad = tape.grad(loss, th.vars(), false).unwrap();
        for (f, gr) in fast.vars().iter().zip(&grad) {
            let want = gr.value().map(|v| -0.05 * v);
            assert!(f.value().max_abs_diff(&want) <= 1e-15);
        }
    }

    #[test]
    fn meta_gradient_matches_finite_differences() {
        let enc = tiny();
        let pool = pool();
        let theta = off_kink(pool.init_params(&enc, &mut stream_rng(2, 1)).unwrap());
        assert!(theta.num_values() <= 200);
        let mc = small_mc();
        let b = batches();
        let g = meta_gradient(&enc, &theta, None, &pool.tasks, &b, &mc).unwrap();
        let fd = central_difference(&theta, 1e-5, |q| {
            Ok(meta_gradient(&enc, q, None, &pool.tasks, &b, &mc)?.loss)
        })
        .unwrap();
        let err = max_relative_error(&g.theta, &fd);
        assert!(err <= 1e-4, "θ: {err}");
    }

    #[test]
    fn first_order_differs_from_second_order() {
        let enc = tiny();
        let pool = pool();
        let theta = pool.init_params(&enc, &mut stream_rng(2, 1)).unwrap();
        let b = batches();
        let second = meta_gradient(&enc, &theta, None, &pool.tasks, &b, &small_mc()).unwrap();
        let first = meta_gradient(
            &enc,
            &theta,
            None,
            &pool.tasks,
            &b,
            &MetaConfig {
                second_order: false,
                ..small_mc()
            },
        )
        .unwrap();
        assert_eq!(first.loss, second.loss);
        assert!(first.theta.max_abs_diff(&second.theta) > 1e-8);
    }

    #[test]
    fn mmar_gradients_match_finite_differences() {
        let enc = tiny();
        let pool = pool();
        let theta = off_kink(pool.init_params(&enc, &mut stream_rng(3, 1)).unwrap());
        let mut gen = HyperparamGenerator::new(theta.layer_count(), 0.3, &mut stream_rng(3, 2));
        // Larger output weights so φ has a visible effect.
        *gen.params.get_mut("gen.w2").unwrap() =
            gen.params.get("gen.w2").unwrap().map(|v| 100.0 * v);
        *gen.params.get_mut("gen.b1").unwrap() =
            Tensor::matrix(1, 2 * gen.layers, vec![0.05; 2 * gen.layers]);
        let mc = small_mc();
        let b = batches();
        let g = meta_gradient(&enc, &theta, Some((&gen, true)), &pool.tasks, &b, &mc).unwrap();
        let fd_theta = central_difference(&theta, 1e-5, |q| {
            Ok(meta_gradient(&enc, q, Some((&gen, true)), &pool.tasks, &b, &mc)?.loss)
        })
        .unwrap();
        let err = max_relative_error(&g.theta, &fd_theta);
        assert!(err <= 1e-4, "θ: {err}");
        let fd_phi = central_difference(&gen.params, 1e-5, |q| {
            let g2 = HyperparamGenerator {
                params: q.clone(),
                ..gen.clone()
            };
            Ok(meta_gradient(&enc, &theta, Some((&g2, true)), &pool.tasks, &b, &mc)?.loss)
        })
        .unwrap();
        let err = max_relative_error(g.phi.as_ref().unwrap(), &fd_phi);
        assert!(err <= 1e-4, "φ: {err}");
    }

    #[test]
    fn zero_inner_lr_meta_training_is_mtt() {
        let enc = tiny();
        let pool = pool();
        let init = pool.init_params(&enc, &mut stream_rng(4, 1)).unwrap();
        let mc = MetaConfig {
            inner_lr: 0.0,
            meta_epochs: 10,
            ..small_mc()
        };
        let schedule = mc.schedule(&pool, 4).unwrap();
        let cfg = TrainConfig {
            lr: mc.outer_lr,
            lr_min: mc.outer_lr_min,
            weight_decay: mc.weight_decay,
            ..TrainConfig::default()
        };
        for steps in [1, 5, schedule.len()] {
            let s = schedule.truncated(steps);
            let mml = meta_train_mml_with(&enc, init.clone(), &pool.tasks, &s, &mc).unwrap();
            let mtt = train_mtt_with(&enc, init.clone(), &pool.tasks, &s, &cfg).unwrap();
            assert!(mml.params.max_abs_diff(&mtt.params) <= 1e-12);
        }
    }

    #[test]
    fn constant_generator_mmar_is_mml() {
        let enc = tiny();
        let pool = pool();
        let init = pool.init_params(&enc, &mut stream_rng(5, 1)).unwrap();
        let mc = MetaConfig {
            meta_epochs: 10,
            ..small_mc()
        };
        let schedule = mc.schedule(&pool, 5).unwrap();
        let gen = HyperparamGenerator::constant(init.layer_count(), mc.inner_lr);
        let mml = meta_train_mml_with(&enc, init.clone(), &pool.tasks, &schedule, &mc).unwrap();
        let mmar = meta_train_mmar_with(
            &enc,
            init,
            gen.clone(),
            &pool.tasks,
            &schedule,
            &mc,
            mc.outer_lr,
            true,
        )
        .unwrap();
        assert!(mml.params.max_abs_diff(&mmar.params) <= 1e-12);
        assert_eq!(mmar.generator, gen);
    }

    #[test]
    fn meta_training_is_deterministic() {
        let enc = tiny();
        let pool = pool();
        let mc = small_mc();
        let a = meta_train_mmar(&enc, &pool, &mc, 1e-3, 9).unwrap();
        let b = meta_train_mmar(&enc, &pool, &mc, 1e-3, 9).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.generator, b.generator);
        let c = meta_train_mml(&enc, &pool, &mc, 9).unwrap();
        assert_eq!(
            c.params,
            meta_train_mml(&enc, &pool, &mc, 9).unwrap().params
        );
    }

    #[test]
    fn insufficient_samples_for_k() {
        let enc = tiny();
        let mc = MetaConfig::default();
        assert!(meta_train_mml(&enc, &pool(), &mc, 0).is_err());
    }
}

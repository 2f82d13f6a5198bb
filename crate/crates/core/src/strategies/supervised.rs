use super::{
    accumulate, encoder_params, stream_rng, streams, Batch, PreparedTask, Schedule, SourcePool,
};
use crate::autodiff::{grads_to_params, Bindings, Tape};
use crate::data::{BrainNetwork, Dataset};
use crate::encoders::{EncoderConfig, GraphBatch};
use crate::error::{Error, Result};
use crate::optim::{CosineSchedule, OptimState};
use crate::parallel::par_map;
use crate::params::ParameterSet;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            lr: 1e-3,
            lr_min: 1e-4,
            weight_decay: 1e-4,
            batch_size: 16,
        }
    }
}

impl TrainConfig {
    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub(crate) fn cosine(&self, steps: usize) -> Result<CosineSchedule> {
        CosineSchedule::new(self.lr, self.lr_min, steps.max(1))
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParameterSet,
    /// Summed task loss of every iteration.
    pub losses: Vec<f64>,
}

/// Summed loss of `batches[t].query` on `tasks[t]` and its gradient.
/// Tasks are differentiated independently and summed in task order.
pub fn supervised_gradient(
    enc: &EncoderConfig,
    params: &ParameterSet,
    tasks: &[PreparedTask],
    batches: &[Batch],
) -> Result<(f64, ParameterSet)> {
    if tasks.len() != batches.len() {
        return Err(Error::Invalid(format!(
            "{} tasks but {} batches",
            tasks.len(),
            batches.len()
        )));
    }
    let idx: Vec<usize> = (0..tasks.len()).collect();
    let parts = par_map(&idx, |&t| -> Result<(f64, ParameterSet)> {
        let tape = Tape::new();
        let p = Bindings::params(&tape, params);
        let loss = tasks[t].loss(enc, &tape, &p, &batches[t].query)?;
        let g = tape.grad(loss, p.vars(), false)?;
        tape.check_finite()?;
        Ok((loss.item(), grads_to_params(&p, &g)))
    });
    let mut total = 0.0;
    let mut grad = params.zeros_like();
    for part in parts {
        let (l, g) = part?;
        total += l;
        accumulate(&mut grad, &g);
    }
    Ok((total, grad))
}

/// Mid-run trainer state: iterations `0..step` of the schedule are done.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: ParameterSet,
    pub optimizer: OptimState,
    pub step: usize,
}

impl TrainState {
    pub fn new(init: ParameterSet, cfg: &TrainConfig) -> Result<Self> {
        let optimizer = OptimState::adam(&init, cfg.lr, cfg.weight_decay)?;
        Ok(TrainState {
            params: init,
            optimizer,
            step: 0,
        })
    }
}

/// Runs schedule iterations `state.step..until` and returns their losses.
/// The learning rate follows a cosine over the whole schedule, so stopping
/// and resuming gives the same trajectory as one uninterrupted run.
pub fn train_steps(
    enc: &EncoderConfig,
    state: &mut TrainState,
    tasks: &[PreparedTask],
    schedule: &Schedule,
    cfg: &TrainConfig,
    until: usize,
) -> Result<Vec<f64>> {
    if until > schedule.len() || until < state.step {
        return Err(Error::Invalid(format!(
            "cannot run steps {}..{until} of {}",
            state.step,
            schedule.len()
        )));
    }
    let cosine = cfg.cosine(schedule.len())?;
    let mut losses = Vec::with_capacity(until - state.step);
    for t in state.step..until {
        let (loss, grad) = supervised_gradient(enc, &state.params, tasks, &schedule.iterations[t])?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at step {t}")));
        }
        state.optimizer.lr = cosine.lr(t)?;
        state.optimizer.step(&mut state.params, &grad)?;
        state.step = t + 1;
        losses.push(loss);
    }
    Ok(losses)
}

/// Adam + cosine annealing on the summed task loss over a fixed schedule.
pub fn train_mtt_with(
    enc: &EncoderConfig,
    init: ParameterSet,
    tasks: &[PreparedTask],
    schedule: &Schedule,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let mut state = TrainState::new(init, cfg)?;
    let losses = train_steps(enc, &mut state, tasks, schedule, cfg, schedule.len())?;
    Ok(TrainOutcome {
        params: state.params,
        losses,
    })
}

/// Multi-task transfer: one combined step on the sum of per-task losses.
pub fn train_mtt(
    enc: &EncoderConfig,
    sources: &SourcePool,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    if sources.is_empty() {
        return Err(Error::Invalid("empty source pool".into()));
    }
    let init = sources.init_params(enc, &mut stream_rng(seed, streams::INIT))?;
    let sizes: Vec<usize> = sources.tasks.iter().map(|t| t.dataset.len()).collect();
    let batch = cfg.batch_size.min(*sizes.iter().min().expect("non-empty"));
    let schedule = Schedule::episodic(
        &sizes,
        0,
        batch,
        cfg.epochs,
        &mut stream_rng(seed, streams::SCHEDULE),
    )?;
    train_mtt_with(enc, init, &sources.tasks, &schedule, cfg)
}

/// Single-task transfer pre-training.
pub fn pretrain_stt(
    enc: &EncoderConfig,
    source: &SourcePool,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    if source.len() != 1 {
        return Err(Error::Invalid(format!(
            "single-task pre-training got {} tasks",
            source.len()
        )));
    }
    train_mtt(enc, source, cfg, seed)
}

/// Supervised training of the encoder part of `init` on `task`.
pub fn finetune(
    enc: &EncoderConfig,
    init: &ParameterSet,
    task: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    let init = encoder_params(init);
    let schedule = finetune_schedule(task, cfg, seed)?;
    train_mtt_with(
        enc,
        init,
        &[PreparedTask::direct(task.clone())],
        &schedule,
        cfg,
    )
}

/// Minibatch schedule used by [`finetune`].
pub fn finetune_schedule(task: &Dataset, cfg: &TrainConfig, seed: u64) -> Result<Schedule> {
    Schedule::minibatches(
        task.len(),
        cfg.batch_size,
        cfg.epochs,
        &mut stream_rng(seed, streams::FINETUNE),
    )
}

/// Direct supervised learning from a random initialisation.
pub fn train_dsl(
    enc: &EncoderConfig,
    task: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    let init = enc.init(task.node_count(), &mut stream_rng(seed, streams::INIT))?;
    finetune(enc, &init, task, cfg, seed)
}

/// Class-1 probabilities.
pub fn predict(
    enc: &EncoderConfig,
    params: &ParameterSet,
    nets: &[&BrainNetwork],
) -> Result<Vec<f64>> {
    if nets.is_empty() {
        return Ok(vec![]);
    }
    let tape = Tape::new();
    let p = Bindings::inputs(&tape, params);
    let z = enc
        .logits(&p, &GraphBatch::from_networks(&tape, nets))
        .sigmoid();
    tape.check_finite()?;
    Ok(z.value().into_data())
}

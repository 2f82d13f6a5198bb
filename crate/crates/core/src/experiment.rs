//! Experiment runs driven by a [`RunConfig`]: pre-training, k-fold
//! fine-tuning, results CSV and summaries.
//!
//! Output directory layout: `results.csv` plus one `init_seed<seed>.bnmc`
//! checkpoint per seed holding the fine-tuning initialisation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::data::{load_dataset, AtlasKind, AutoencoderConfig, Dataset, Task, TaskPool};
use crate::encoders::{EncoderConfig, EncoderKind};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate_init, mean_std, paired_t_test, pretrain_full, FoldResult, PairedTest, StrategySetup,
};
use crate::parallel::par_map;
use crate::params::ParameterSet;
use crate::strategies::{
    prepare_sources, stream_rng, streams, MetaConfig, SourcePool, Strategy, TrainConfig,
};

pub const RESULTS_FILE: &str = "results.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub strategy: Strategy,
    pub encoder: EncoderKind,
    /// Encoder widths; `None` uses the encoder's defaults.
    pub hidden_dims: Option<Vec<usize>>,
    pub head_hidden: usize,
    pub gat_edge_bias: bool,
    pub sources: Vec<PathBuf>,
    pub target: Option<PathBuf>,
    pub atlas: AtlasKind,
    /// Encoder node count when there is no target; otherwise must match it.
    pub target_dim: Option<usize>,
    /// STT / MTT pre-training epochs.
    pub epochs: usize,
    pub meta_epochs: usize,
    pub finetune_epochs: usize,
    pub lr: f64,
    pub lr_min: f64,
    pub finetune_lr: f64,
    pub weight_decay: f64,
    pub inner_lr: f64,
    /// MMAR outer learning rate.
    pub eta: f64,
    pub first_order: bool,
    /// Support and query size per task.
    pub k: usize,
    pub batch_size: usize,
    pub folds: usize,
    pub seeds: Vec<u64>,
    pub stt_source: usize,
    pub out: PathBuf,
    /// Keep seeds already complete in an existing results file.
    pub resume: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            strategy: Strategy::Dsl,
            encoder: EncoderKind::Gcn,
            hidden_dims: None,
            head_hidden: 8,
            gat_edge_bias: false,
            sources: vec![],
            target: None,
            atlas: AtlasKind::ZeroPad,
            target_dim: None,
            epochs: 150,
            meta_epochs: 150,
            finetune_epochs: 200,
            lr: 1e-3,
            lr_min: 1e-4,
            finetune_lr: 1e-3,
            weight_decay: 1e-4,
            inner_lr: 0.01,
            eta: 1e-3,
            first_order: false,
            k: 16,
            batch_size: 16,
            folds: 5,
            seeds: vec![0],
            stt_source: 0,
            out: PathBuf::from("out"),
            resume: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.strategy.needs_sources() && self.sources.is_empty() {
            return Err(Error::Invalid(format!(
                "`--sources` is required for strategy `{}`",
                self.strategy.tag()
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Invalid(
                "`--seeds` must name at least one seed".into(),
            ));
        }
        if self.folds < 2 {
            return Err(Error::Invalid(format!(
                "`--folds` must be at least 2, got {}",
                self.folds
            )));
        }
        if self.k == 0 || self.batch_size == 0 {
            return Err(Error::Invalid(
                "`--k` and `--batch-size` must be positive".into(),
            ));
        }
        if self.strategy == Strategy::Stt && self.stt_source >= self.sources.len() {
            return Err(Error::Invalid(format!(
                "`--stt-source` {} out of range",
                self.stt_source
            )));
        }
        for (flag, v) in [
            ("--lr", self.lr),
            ("--finetune-lr", self.finetune_lr),
            ("--eta", self.eta),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Invalid(format!(
                    "`{flag}` must be positive, got {v}"
                )));
            }
        }
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr.min(self.finetune_lr)) {
            return Err(Error::Invalid(format!(
                "`--lr-min` must be in (0, lr], got {}",
                self.lr_min
            )));
        }
        self.encoder_config().validate()
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        let mut e = EncoderConfig::new(self.encoder).with_head_hidden(self.head_hidden);
        if let Some(d) = &self.hidden_dims {
            e = e.with_hidden(d);
        }
        e.gat_edge_bias = self.gat_edge_bias;
        e
    }

    pub fn pretrain_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            lr_min: self.lr_min,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
        }
    }

    pub fn finetune_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.finetune_epochs,
            lr: self.finetune_lr,
            ..self.pretrain_config()
        }
    }

    pub fn meta_config(&self) -> MetaConfig {
        MetaConfig {
            inner_lr: self.inner_lr,
            outer_lr: self.lr,
            outer_lr_min: self.lr_min,
            weight_decay: self.weight_decay,
            support_size: self.k,
            query_size: self.k,
            inner_steps: 1,
            meta_epochs: self.meta_epochs,
            second_order: !self.first_order,
        }
    }

    pub fn setup(&self, sources: Option<SourcePool>) -> StrategySetup {
        StrategySetup {
            encoder: self.encoder_config(),
            sources,
            pretrain: self.pretrain_config(),
            meta: self.meta_config(),
            eta: self.eta,
            finetune: self.finetune_config(),
            stt_source: self.stt_source,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Invalid(format!("run config: {e}")))
    }

    fn autoencoder(&self, target_dim: usize) -> AutoencoderConfig {
        AutoencoderConfig {
            target_dim,
            seed: self.seeds[0],
            ..AutoencoderConfig::default()
        }
    }
}

/// One row of the results CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub strategy: String,
    pub encoder: String,
    pub dataset: String,
    pub modality: String,
    pub atlas: String,
    pub seed: u64,
    pub fold: usize,
    pub auc: f64,
    pub acc: f64,
}

impl ResultRow {
    fn key(&self) -> (&str, &str, &str, &str, &str) {
        (
            &self.strategy,
            &self.encoder,
            &self.dataset,
            &self.modality,
            &self.atlas,
        )
    }
}

pub fn write_results(path: impl AsRef<Path>, rows: &[ResultRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Data(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    let bytes = if rows.is_empty() {
        b"strategy,encoder,dataset,modality,atlas,seed,fold,auc,acc\n".to_vec()
    } else {
        bytes
    };
    let tmp = path.with_extension("csv.tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Data(format!("{}: {e}", path.display()))))
        .collect()
}

fn load_all(paths: &[PathBuf]) -> Result<Vec<Dataset>> {
    paths.iter().map(load_dataset).collect()
}

/// Source pool aligned to `target_dim`, or `None` when there are no sources.
pub fn load_sources(cfg: &RunConfig, target_dim: usize) -> Result<Option<SourcePool>> {
    if cfg.sources.is_empty() {
        return Ok(None);
    }
    let pool = TaskPool::new(
        load_all(&cfg.sources)?
            .into_iter()
            .map(Task::source)
            .collect(),
    );
    if let Some(big) = pool
        .tasks
        .iter()
        .find(|t| t.dataset.node_count() > target_dim && cfg.atlas == AtlasKind::ZeroPad)
    {
        return Err(Error::Data(format!(
            "source `{}` has {} nodes; zero-padding cannot shrink to {target_dim}",
            big.name(),
            big.dataset.node_count()
        )));
    }
    prepare_sources(&pool, target_dim, cfg.atlas, &cfg.autoencoder(target_dim)).map(Some)
}

fn load_target(cfg: &RunConfig) -> Result<Dataset> {
    let path = cfg
        .target
        .as_ref()
        .ok_or_else(|| Error::Invalid("`--target` is required".into()))?;
    let target = load_dataset(path)?;
    if let Some(d) = cfg.target_dim.filter(|&d| d != target.node_count()) {
        return Err(Error::Invalid(format!(
            "`--target-dim` {d} differs from the target's {} nodes",
            target.node_count()
        )));
    }
    Ok(target)
}

/// Encoder node count for runs without a target: `--target-dim` or the largest source.
fn source_dim(cfg: &RunConfig) -> Result<usize> {
    if let Some(d) = cfg.target_dim {
        return Ok(d);
    }
    let sources = load_all(&cfg.sources)?;
    sources
        .iter()
        .map(Dataset::node_count)
        .max()
        .ok_or_else(|| Error::Invalid("`--target-dim` is required without sources".into()))
}

pub fn checkpoint_path(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("init_seed{seed}.bnmc"))
}

fn init_checkpoint(
    cfg: &RunConfig,
    setup: &StrategySetup,
    dim: usize,
    seed: u64,
) -> Result<Checkpoint> {
    let pre = pretrain_full(cfg.strategy, setup, dim, seed)?;
    let mut seed_cfg = cfg.clone();
    seed_cfg.seeds = vec![seed];
    seed_cfg.target_dim = Some(dim);
    Ok(Checkpoint {
        generator: pre.generator,
        ..Checkpoint::new(pre.params, seed_cfg.to_json())
    })
}

/// Pre-trains (or meta-trains) once per seed without a target and writes
/// one checkpoint per seed into `cfg.out`.
pub fn pretrain_run(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let dim = source_dim(cfg)?;
    let setup = cfg.setup(load_sources(cfg, dim)?);
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    par_map(&cfg.seeds, |&seed| {
        let ck = init_checkpoint(cfg, &setup, dim, seed)?;
        let path = checkpoint_path(&cfg.out, seed);
        save_checkpoint(&ck, &path)?;
        Ok(path)
    })
    .into_iter()
    .collect()
}

fn rows_for(
    cfg: &RunConfig,
    strategy: &str,
    target: &Dataset,
    folds: &[FoldResult],
) -> Vec<ResultRow> {
    folds
        .iter()
        .map(|f| ResultRow {
            strategy: strategy.to_string(),
            encoder: cfg.encoder.tag().into(),
            dataset: target.name.clone(),
            modality: target.modality.clone(),
            atlas: cfg.atlas.tag().into(),
            seed: f.seed,
            fold: f.fold,
            auc: f.auc,
            acc: f.acc,
        })
        .collect()
}

fn finish(cfg: &RunConfig, mut rows: Vec<ResultRow>) -> Result<Vec<ResultRow>> {
    rows.sort_by(|a, b| (a.key(), a.seed, a.fold).cmp(&(b.key(), b.seed, b.fold)));
    write_results(cfg.out.join(RESULTS_FILE), &rows)?;
    Ok(rows)
}

/// Full pipeline: pre-train per seed, save the initialisation, fine-tune on
/// every fold of the target and write `results.csv`.
pub fn run(cfg: &RunConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let target = load_target(cfg)?;
    let dim = target.node_count();
    let setup = cfg.setup(load_sources(cfg, dim)?);
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let results = cfg.out.join(RESULTS_FILE);
    let probe = rows_for(
        cfg,
        cfg.strategy.tag(),
        &target,
        &[FoldResult {
            seed: 0,
            fold: 0,
            auc: 0.0,
            acc: 0.0,
        }],
    );
    let mut kept = Vec::new();
    if cfg.resume && results.exists() {
        kept = read_results(&results)?;
        kept.retain(|r| r.key() == probe[0].key() && cfg.seeds.contains(&r.seed));
        let mut per_seed = BTreeMap::<u64, usize>::new();
        for r in &kept {
            *per_seed.entry(r.seed).or_default() += 1;
        }
        kept.retain(|r| per_seed[&r.seed] == cfg.folds);
    }
    let todo: Vec<u64> = cfg
        .seeds
        .iter()
        .copied()
        .filter(|s| !kept.iter().any(|r| r.seed == *s))
        .collect();
    let fresh = par_map(&todo, |&seed| -> Result<Vec<ResultRow>> {
        let ck = init_checkpoint(cfg, &setup, dim, seed)?;
        save_checkpoint(&ck, checkpoint_path(&cfg.out, seed))?;
        let folds = evaluate_init(
            &setup.encoder,
            &ck.params,
            &target,
            &setup.finetune,
            cfg.folds,
            seed,
        )?;
        Ok(rows_for(cfg, cfg.strategy.tag(), &target, &folds))
    });
    for r in fresh {
        kept.extend(r?);
    }
    finish(cfg, kept)
}

/// Fine-tunes from a saved initialisation (or a fresh per-seed random one
/// when `init` is `None`) on every fold of the target. The strategy column
/// comes from the checkpoint's configuration.
pub fn finetune_run(cfg: &RunConfig, init: Option<&Path>) -> Result<Vec<ResultRow>> {
    let target = load_target(cfg)?;
    let (cfg, strategy, params) = match init {
        None => (cfg.clone(), Strategy::Dsl.tag().to_string(), None),
        Some(path) => {
            let ck = load_checkpoint(path)?;
            let saved = RunConfig::from_json(&ck.config)?;
            let merged = RunConfig {
                strategy: saved.strategy,
                encoder: saved.encoder,
                hidden_dims: saved.hidden_dims.clone(),
                head_hidden: saved.head_hidden,
                gat_edge_bias: saved.gat_edge_bias,
                atlas: saved.atlas,
                sources: vec![],
                ..cfg.clone()
            };
            (merged, saved.strategy.tag().to_string(), Some(ck.params))
        }
    };
    if cfg.seeds.is_empty() || cfg.folds < 2 {
        return Err(Error::Invalid(
            "need at least one seed and two folds".into(),
        ));
    }
    let enc = cfg.encoder_config();
    enc.validate()?;
    let dim = target.node_count();
    if let Some(p) = &params {
        let expected = enc.init(dim, &mut stream_rng(0, streams::INIT))?;
        if !p.same_layout(&expected) {
            return Err(Error::Shape(format!(
                "checkpoint parameters do not fit a {} encoder on {dim} nodes",
                enc.kind.tag()
            )));
        }
    }
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let ft = cfg.finetune_config();
    let per_seed = par_map(&cfg.seeds, |&seed| -> Result<Vec<ResultRow>> {
        let init: ParameterSet = match &params {
            Some(p) => p.clone(),
            None => enc.init(dim, &mut stream_rng(seed, streams::INIT))?,
        };
        let folds = evaluate_init(&enc, &init, &target, &ft, cfg.folds, seed)?;
        Ok(rows_for(&cfg, &strategy, &target, &folds))
    });
    let mut rows = Vec::new();
    for r in per_seed {
        rows.extend(r?);
    }
    finish(&cfg, rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub strategy: String,
    pub encoder: String,
    pub dataset: String,
    pub modality: String,
    pub atlas: String,
    pub rows: usize,
    pub auc: (f64, f64),
    pub acc: (f64, f64),
    /// One-sided paired test of this strategy's per-seed mean AUC against DSL.
    pub vs_dsl: Option<PairedTest>,
}

fn seed_means(rows: &[&ResultRow]) -> BTreeMap<u64, f64> {
    let mut by_seed = BTreeMap::<u64, Vec<f64>>::new();
    for r in rows {
        by_seed.entry(r.seed).or_default().push(r.auc);
    }
    by_seed
        .into_iter()
        .map(|(s, v)| (s, mean_std(&v).0))
        .collect()
}

/// Mean ± sample std per (strategy, encoder, dataset, modality, atlas).
pub fn summarize(rows: &[ResultRow]) -> Vec<Summary> {
    let mut groups = BTreeMap::<(&str, &str, &str, &str, &str), Vec<&ResultRow>>::new();
    for r in rows {
        groups.entry(r.key()).or_default().push(r);
    }
    let mut out = Vec::with_capacity(groups.len());
    for (key, g) in &groups {
        let (strategy, encoder, dataset, modality, atlas) = *key;
        let aucs: Vec<f64> = g.iter().map(|r| r.auc).collect();
        let accs: Vec<f64> = g.iter().map(|r| r.acc).collect();
        let vs_dsl = groups
            .get(&("dsl", encoder, dataset, modality, atlas))
            .filter(|_| strategy != "dsl")
            .and_then(|base| {
                let (a, b) = (seed_means(g), seed_means(base));
                let (x, y): (Vec<f64>, Vec<f64>) = a
                    .iter()
                    .filter_map(|(s, v)| b.get(s).map(|w| (*v, *w)))
                    .unzip();
                (x.len() >= 2).then(|| paired_t_test(&x, &y).ok()).flatten()
            });
        out.push(Summary {
            strategy: strategy.into(),
            encoder: encoder.into(),
            dataset: dataset.into(),
            modality: modality.into(),
            atlas: atlas.into(),
            rows: g.len(),
            auc: mean_std(&aucs),
            acc: mean_std(&accs),
            vs_dsl,
        });
    }
    out
}

pub fn format_summary(summaries: &[Summary]) -> String {
    let mut s = format!(
        "{:<8} {:<12} {:<24} {:<6} {:>5} {:>15} {:>15} {:>10}\n",
        "strategy", "encoder", "task", "atlas", "rows", "auc", "acc", "p(>dsl)"
    );
    for m in summaries {
        let p = m
            .vs_dsl
            .map_or("-".to_string(), |t| format!("{:.4}", t.p_greater));
        writeln!(
            s,
            "{:<8} {:<12} {:<24} {:<6} {:>5} {:>7.4}±{:<7.4} {:>7.4}±{:<7.4} {:>10}",
            m.strategy,
            m.encoder,
            format!("{}/{}", m.dataset, m.modality),
            m.atlas,
            m.rows,
            m.auc.0,
            m.auc.1,
            m.acc.0,
            m.acc.1,
            p
        )
        .expect("write to string");
    }
    s
}

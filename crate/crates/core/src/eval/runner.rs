use super::{accuracy, auc, kfold_split, mean_std};
use crate::data::Dataset;
use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::parallel::par_map;
use crate::params::ParameterSet;
use crate::strategies::{
    encoder_params, finetune, meta_train_mmar, meta_train_mml, predict, pretrain_stt, stream_rng,
    streams, train_mtt, MetaConfig, SourcePool, Strategy, TrainConfig,
};

/// Everything a strategy needs besides the target task.
#[derive(Clone, Debug)]
pub struct StrategySetup {
    pub encoder: EncoderConfig,
    pub sources: Option<SourcePool>,
    /// STT / MTT pre-training.
    pub pretrain: TrainConfig,
    pub meta: MetaConfig,
    /// MMAR outer learning rate.
    pub eta: f64,
    pub finetune: TrainConfig,
    /// Source used by STT.
    pub stt_source: usize,
}

impl StrategySetup {
    pub fn new(encoder: EncoderConfig, sources: Option<SourcePool>) -> Self {
        StrategySetup {
            encoder,
            sources,
            pretrain: TrainConfig::default().with_epochs(150),
            meta: MetaConfig::default(),
            eta: 1e-3,
            finetune: TrainConfig::default(),
            stt_source: 0,
        }
    }
}

/// Output of a pre-training strategy.
#[derive(Clone, Debug, PartialEq)]
pub struct Pretrained {
    /// Encoder parameters (learned projections dropped).
    pub params: ParameterSet,
    /// MMAR's hyperparameter generator.
    pub generator: Option<ParameterSet>,
}

/// Runs `strategy`'s pre-training for a `target_dim`-node target.
pub fn pretrain_full(
    strategy: Strategy,
    setup: &StrategySetup,
    target_dim: usize,
    seed: u64,
) -> Result<Pretrained> {
    let enc = &setup.encoder;
    if strategy == Strategy::Dsl {
        let params = enc.init(target_dim, &mut stream_rng(seed, streams::INIT))?;
        return Ok(Pretrained {
            params,
            generator: None,
        });
    }
    let sources = setup
        .sources
        .as_ref()
        .ok_or_else(|| Error::Invalid(format!("strategy {} needs source tasks", strategy.tag())))?;
    if sources.target_dim != target_dim {
        return Err(Error::Shape(format!(
            "sources aligned to {} nodes, target has {target_dim}",
            sources.target_dim
        )));
    }
    let (params, generator) = match strategy {
        Strategy::Dsl => unreachable!(),
        Strategy::Stt => {
            if setup.stt_source >= sources.len() {
                return Err(Error::Invalid(format!(
                    "STT source index {} out of range",
                    setup.stt_source
                )));
            }
            (
                pretrain_stt(
                    enc,
                    &sources.single(setup.stt_source),
                    &setup.pretrain,
                    seed,
                )?
                .params,
                None,
            )
        }
        Strategy::Mtt => (train_mtt(enc, sources, &setup.pretrain, seed)?.params, None),
        Strategy::Mml => (
            meta_train_mml(enc, sources, &setup.meta, seed)?.params,
            None,
        ),
        Strategy::Mmar => {
            let out = meta_train_mmar(enc, sources, &setup.meta, setup.eta, seed)?;
            (out.params, Some(out.generator.params))
        }
    };
    Ok(Pretrained {
        params: encoder_params(&params),
        generator,
    })
}

/// Initial encoder parameters for fine-tuning on a `target_dim`-node target.
pub fn pretrain(
    strategy: Strategy,
    setup: &StrategySetup,
    target_dim: usize,
    seed: u64,
) -> Result<ParameterSet> {
    Ok(pretrain_full(strategy, setup, target_dim, seed)?.params)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FoldResult {
    pub seed: u64,
    pub fold: usize,
    pub auc: f64,
    pub acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub strategy: Strategy,
    /// Sorted by `(seed, fold)`.
    pub folds: Vec<FoldResult>,
}

impl Evaluation {
    pub fn aucs(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.auc).collect()
    }

    pub fn accs(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.acc).collect()
    }

    pub fn auc_stats(&self) -> (f64, f64) {
        mean_std(&self.aucs())
    }

    pub fn acc_stats(&self) -> (f64, f64) {
        mean_std(&self.accs())
    }

    /// Per-seed mean AUC, in seed order.
    pub fn seed_mean_aucs(&self) -> Vec<f64> {
        let mut out: Vec<(u64, Vec<f64>)> = Vec::new();
        for f in &self.folds {
            match out.last_mut() {
                Some((s, v)) if *s == f.seed => v.push(f.auc),
                _ => out.push((f.seed, vec![f.auc])),
            }
        }
        out.into_iter().map(|(_, v)| mean_std(&v).0).collect()
    }
}

/// Seed used for fold `fold`'s fine-tuning batches under run seed `seed`.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(fold as u64)
}

/// Fold `fold` of `k`: fine-tune from `init` on the training split and score the test split.
pub fn evaluate_fold(
    enc: &EncoderConfig,
    init: &ParameterSet,
    target: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
    fold: usize,
    k: usize,
) -> Result<FoldResult> {
    let folds = kfold_split(&target.labels(), k, seed)?;
    let split = &folds[fold];
    let train_subjects = target.subset(&split.train).into_iter().cloned().collect();
    let train = Dataset::new(target.name.clone(), target.modality.clone(), train_subjects)?;
    let trained = finetune(enc, init, &train, cfg, fold_seed(seed, fold))?;
    let test = target.subset(&split.test);
    let labels: Vec<u8> = test.iter().map(|n| n.label()).collect();
    let probs = predict(enc, &trained.params, &test)?;
    Ok(FoldResult {
        seed,
        fold,
        auc: auc(&probs, &labels)?,
        acc: accuracy(&probs, &labels)?,
    })
}

/// Fine-tunes `init` on every training split of the `k` folds drawn with `seed`.
pub fn evaluate_init(
    enc: &EncoderConfig,
    init: &ParameterSet,
    target: &Dataset,
    cfg: &TrainConfig,
    k: usize,
    seed: u64,
) -> Result<Vec<FoldResult>> {
    let folds: Vec<usize> = (0..k).collect();
    par_map(&folds, |&f| {
        evaluate_fold(enc, init, target, cfg, seed, f, k)
    })
    .into_iter()
    .collect()
}

/// Pre-trains once per seed, then fine-tunes and scores every fold.
pub fn evaluate_strategy(
    strategy: Strategy,
    setup: &StrategySetup,
    target: &Dataset,
    k: usize,
    seeds: &[u64],
) -> Result<Evaluation> {
    let per_seed = par_map(seeds, |&seed| -> Result<Vec<FoldResult>> {
        let init = pretrain(strategy, setup, target.node_count(), seed)?;
        evaluate_init(&setup.encoder, &init, target, &setup.finetune, k, seed)
    });
    let mut folds = Vec::with_capacity(seeds.len() * k);
    for r in per_seed {
        folds.extend(r?);
    }
    folds.sort_by_key(|f| (f.seed, f.fold));
    Ok(Evaluation { strategy, folds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::BrainNetwork;
    use crate::encoders::EncoderKind;
    use crate::tensor::Tensor;
    use rand::Rng;

    fn toy(m: usize, n: usize, shift: f64, seed: u64) -> Dataset {
        let mut rng = stream_rng(seed, 55);
        let subjects = (0..n)
            .map(|i| {
                let label = (i % 2) as u8;
                let mut a = Tensor::zeros(m, m);
                for r in 0..m {
                    for c in r + 1..m {
                        let v = rng.random_range(0.0..0.4) + label as f64 * shift;
                        a.set(r, c, v);
                        a.set(c, r, v);
                    }
                }
                BrainNetwork::new(a, label).unwrap()
            })
            .collect();
        Dataset::new("toy", "fmri", subjects).unwrap()
    }

    fn tiny_setup(sources: Option<SourcePool>) -> StrategySetup {
        let enc = EncoderConfig::new(EncoderKind::Gcn)
            .with_hidden(&[4, 3])
            .with_head_hidden(3);
        let mut s = StrategySetup::new(enc, sources);
        s.pretrain.epochs = 2;
        s.meta = MetaConfig {
            support_size: 4,
            query_size: 4,
            meta_epochs: 2,
            ..MetaConfig::default()
        };
        s.finetune.epochs = 3;
        s
    }

    #[test]
    fn five_folds_per_seed() {
        let target = toy(5, 20, 0.5, 1);
        let ev = evaluate_strategy(Strategy::Dsl, &tiny_setup(None), &target, 5, &[3, 1]).unwrap();
        assert_eq!(ev.folds.len(), 10);
        assert_eq!(ev.folds[0].seed, 1);
        assert!(ev
            .folds
            .windows(2)
            .all(|w| (w[0].seed, w[0].fold) < (w[1].seed, w[1].fold)));
        assert_eq!(ev.seed_mean_aucs().len(), 2);
        for f in &ev.folds {
            assert!((0.0..=1.0).contains(&f.auc) && (0.0..=1.0).contains(&f.acc));
        }
    }

    #[test]
    fn every_strategy_runs() {
        let target = toy(5, 20, 0.5, 1);
        let pool = SourcePool::direct(vec![toy(5, 16, 0.4, 2), toy(5, 16, 0.3, 3)]).unwrap();
        let setup = tiny_setup(Some(pool));
        for s in Strategy::ALL {
            let a = evaluate_strategy(s, &setup, &target, 5, &[0]).unwrap();
            let b = evaluate_strategy(s, &setup, &target, 5, &[0]).unwrap();
            assert_eq!(a, b, "{s:?}");
        }
    }

    #[test]
    fn source_strategies_need_sources() {
        let target = toy(5, 20, 0.5, 1);
        let err =
            evaluate_strategy(Strategy::Mml, &tiny_setup(None), &target, 5, &[0]).unwrap_err();
        assert!(err.to_string().contains("source"));
    }

    #[test]
    fn constant_predictor_scores() {
        let labels = [0u8, 0, 0, 1, 1];
        let probs = [0.5; 5];
        assert_eq!(auc(&probs, &labels).unwrap(), 0.5);
        // 0.5 predicts class 1.
        assert_eq!(accuracy(&probs, &labels).unwrap(), 0.4);
        let probs = [0.49; 5];
        assert_eq!(accuracy(&probs, &labels).unwrap(), 0.6);
    }
}

//! Block-structured synthetic multi-view brain networks.
//!
//! Each subject gets a base matrix `B = P + N_s`, where `P` is a latent
//! pattern shared by every spec with the same `shared_signal_id` and `N_s`
//! is subject noise. Class-1 subjects add `δ` to the within-block entries
//! of the blocks the shared signal marks as affected. Each view adds its own
//! noise and is clipped per the weight mode. Diagonals are zero.
//!
//! The pattern and the affected-block flags are drawn in node order, so two
//! specs of different sizes with the same signal id agree on their common
//! leading nodes (and blocks, when the partitions share a prefix).

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{BrainNetwork, Dataset};
use crate::error::{Error, Result};
use crate::strategies::stream_rng;
use crate::tensor::Tensor;

const PATTERN_STREAM: u64 = 10;
const BLOCK_STREAM: u64 = 11;
const SUBJECT_STREAM: u64 = 12;

/// Mean within-block and cross-block weights of the latent pattern.
const WITHIN_MEAN: f64 = 0.45;
const CROSS_MEAN: f64 = 0.15;
/// Spread of the per-edge latent pattern.
const PATTERN_SD: f64 = 0.15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    /// Clipped to `[-1, 1]`.
    Correlation,
    /// Clipped at 0.
    Nonneg,
}

impl WeightMode {
    fn clip(self, v: f64) -> f64 {
        match self {
            WeightMode::Correlation => v.clamp(-1.0, 1.0),
            WeightMode::Nonneg => v.max(0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub name: String,
    pub node_count: usize,
    /// One dataset is produced per modality name.
    pub modalities: Vec<String>,
    /// `[class 0, class 1]`.
    pub subjects_per_class: [usize; 2],
    pub blocks: Vec<usize>,
    pub class_effect: f64,
    pub shared_signal_id: u64,
    pub noise: f64,
    pub weight_mode: WeightMode,
    pub seed: u64,
}

/// Partition of `m` nodes into blocks of `size`, the last one possibly smaller.
pub fn uniform_blocks(m: usize, size: usize) -> Vec<usize> {
    let size = size.max(1);
    let mut out = vec![size; m / size];
    if m % size != 0 {
        out.push(m % size);
    }
    out
}

impl SynthSpec {
    fn preset(
        name: &str,
        m: usize,
        counts: [usize; 2],
        modalities: &[&str],
        mode: WeightMode,
    ) -> Self {
        SynthSpec {
            name: name.into(),
            node_count: m,
            modalities: modalities.iter().map(|s| s.to_string()).collect(),
            subjects_per_class: counts,
            blocks: uniform_blocks(m, 6),
            class_effect: 0.1,
            shared_signal_id: 0,
            noise: 0.2,
            weight_mode: mode,
            seed: 0,
        }
    }

    pub fn hiv_like() -> Self {
        Self::preset(
            "hiv-like",
            90,
            [35, 35],
            &["fmri", "dti"],
            WeightMode::Correlation,
        )
    }

    pub fn bp_like() -> Self {
        Self::preset(
            "bp-like",
            82,
            [52, 45],
            &["fmri", "dti"],
            WeightMode::Correlation,
        )
    }

    pub fn ppmi_like() -> Self {
        Self::preset(
            "ppmi-like",
            84,
            [569, 149],
            &["pico", "hough", "fact"],
            WeightMode::Nonneg,
        )
    }

    pub fn from_preset(name: &str) -> Result<Self> {
        match name {
            "hiv-like" => Ok(Self::hiv_like()),
            "bp-like" => Ok(Self::bp_like()),
            "ppmi-like" => Ok(Self::ppmi_like()),
            _ => Err(Error::Invalid(format!(
                "unknown preset `{name}` (hiv-like, bp-like, ppmi-like)"
            ))),
        }
    }

    pub fn views(&self) -> usize {
        self.modalities.len()
    }

    pub fn validate(&self) -> Result<()> {
        let total: usize = self.blocks.iter().sum();
        if self.blocks.contains(&0) || total != self.node_count {
            return Err(Error::Invalid(format!(
                "block partition {:?} does not cover {} nodes",
                self.blocks, self.node_count
            )));
        }
        if self.node_count < 2 {
            return Err(Error::Invalid("need at least 2 nodes".into()));
        }
        if self.modalities.is_empty() {
            return Err(Error::Invalid("need at least one view".into()));
        }
        if self.subjects_per_class.contains(&0) {
            return Err(Error::Invalid("need subjects of both classes".into()));
        }
        if !(self.class_effect >= 0.0 && self.class_effect.is_finite()) {
            return Err(Error::Invalid(format!(
                "class effect must be >= 0, got {}",
                self.class_effect
            )));
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return Err(Error::Invalid(format!(
                "noise must be > 0, got {}",
                self.noise
            )));
        }
        Ok(())
    }

    /// Block index of every node.
    pub fn block_of(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(b, &n)| std::iter::repeat_n(b, n))
            .collect()
    }

    /// Which blocks carry the class effect; at least one always does.
    pub fn affected_blocks(&self) -> Vec<bool> {
        let mut rng = stream_rng(self.shared_signal_id, BLOCK_STREAM);
        let mut flags: Vec<bool> = self.blocks.iter().map(|_| rng.random_bool(0.5)).collect();
        if !flags.iter().any(|&f| f) {
            flags[0] = true;
        }
        flags
    }

    /// Shared latent pattern `P`.
    pub fn pattern(&self) -> Tensor {
        let m = self.node_count;
        let block = self.block_of();
        let normal = Normal::new(0.0, PATTERN_SD).expect("valid sd");
        let mut rng = stream_rng(self.shared_signal_id, PATTERN_STREAM);
        let mut p = Tensor::zeros(m, m);
        for i in 0..m {
            for j in 0..i {
                let mean = if block[i] == block[j] {
                    WITHIN_MEAN
                } else {
                    CROSS_MEAN
                };
                let v = mean + normal.sample(&mut rng);
                p.set(i, j, v);
                p.set(j, i, v);
            }
        }
        p
    }
}

fn symmetric_noise(m: usize, normal: &Normal<f64>, rng: &mut impl Rng) -> Tensor {
    let mut n = Tensor::zeros(m, m);
    for i in 0..m {
        for j in 0..i {
            let v = normal.sample(rng);
            n.set(i, j, v);
            n.set(j, i, v);
        }
    }
    n
}

/// One dataset per view, named `spec.name` with the view's modality.
pub fn generate(spec: &SynthSpec) -> Result<Vec<Dataset>> {
    spec.validate()?;
    let m = spec.node_count;
    let block = spec.block_of();
    let affected = spec.affected_blocks();
    let pattern = spec.pattern();
    let normal = Normal::new(0.0, spec.noise).expect("validated noise");
    let mut rng = stream_rng(spec.seed, SUBJECT_STREAM);
    let [n0, n1] = spec.subjects_per_class;
    let mut views: Vec<Vec<BrainNetwork>> = vec![Vec::with_capacity(n0 + n1); spec.views()];
    for s in 0..n0 + n1 {
        let label = u8::from(s >= n0);
        let mut base = pattern.zip_map(&symmetric_noise(m, &normal, &mut rng), |a, b| a + b);
        if label == 1 {
            for i in 0..m {
                for j in 0..m {
                    if i != j && block[i] == block[j] && affected[block[i]] {
                        base.set(i, j, base.get(i, j) + spec.class_effect);
                    }
                }
            }
        }
        for v in views.iter_mut() {
            let mut x = base.zip_map(&symmetric_noise(m, &normal, &mut rng), |a, b| a + b);
            for i in 0..m {
                for j in 0..m {
                    let w = if i == j {
                        0.0
                    } else {
                        spec.weight_mode.clip(x.get(i, j))
                    };
                    x.set(i, j, w);
                }
            }
            v.push(BrainNetwork::new(x, label)?);
        }
    }
    views
        .into_iter()
        .zip(&spec.modalities)
        .map(|(subjects, modality)| Dataset::new(spec.name.clone(), modality.clone(), subjects))
        .collect()
}

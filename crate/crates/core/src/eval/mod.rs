//! Metrics, stratified cross-validation, significance tests and task embeddings.

mod fisher;
mod runner;

use rand::seq::SliceRandom;
use statrs::distribution::{ContinuousCDF, StudentsT};

pub use fisher::{
    fisher_diagonal, fisher_task_embedding, similarity_csv, task_similarity_matrix, TaskEmbedding,
};
pub use runner::{
    evaluate_fold, evaluate_init, evaluate_strategy, fold_seed, pretrain, pretrain_full,
    Evaluation, FoldResult, Pretrained, StrategySetup,
};

use crate::error::{Error, Result};
use crate::strategies::stream_rng;

/// Fraction of predictions `prob ≥ 0.5 ⇔ label = 1`.
pub fn accuracy(probs: &[f64], labels: &[u8]) -> Result<f64> {
    check_pairs(probs, labels)?;
    let hits = probs
        .iter()
        .zip(labels)
        .filter(|(&p, &y)| (p >= 0.5) == (y == 1))
        .count();
    Ok(hits as f64 / probs.len() as f64)
}

fn check_pairs(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Invalid("empty input".into()));
    }
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("NaN score".into()));
    }
    Ok(())
}

/// Area under the ROC curve from the Mann–Whitney rank sum, ties at half credit.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_pairs(scores, labels)?;
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Invalid("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of positives, so tied groups stay integral.
    let mut rank2_pos: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share the average (i + j + 2) / 2.
        let avg2 = (i + j + 2) as u64;
        let p = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u64;
        rank2_pos += avg2 * p;
        i = j + 1;
    }
    let (p, n) = (pos as u64, neg as u64);
    let u2 = rank2_pos - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}

/// `O(P·N)` reference used to check [`auc`].
pub fn auc_brute_force(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_pairs(scores, labels)?;
    let (mut wins2, mut pairs) = (0u64, 0u64);
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] == 1 {
                continue;
            }
            pairs += 1;
            wins2 += if si > sj {
                2
            } else if si == sj {
                1
            } else {
                0
            };
        }
    }
    if pairs == 0 {
        return Err(Error::Invalid("AUC needs both classes".into()));
    }
    Ok(wins2 as f64 / (2 * pairs) as f64)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified `k`-fold split. Each class is shuffled and dealt round-robin,
/// continuing the deal across classes so fold sizes differ by at most one.
pub fn kfold_split(labels: &[u8], k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::Invalid("need at least 2 folds".into()));
    }
    let mut by_class: [Vec<usize>; 2] = [vec![], vec![]];
    for (i, &y) in labels.iter().enumerate() {
        by_class
            .get_mut(y as usize)
            .ok_or_else(|| Error::Invalid(format!("label {y}")))?
            .push(i);
    }
    if by_class.iter().any(|c| c.len() < k) {
        return Err(Error::Invalid(format!(
            "{k} folds need at least {k} samples per class (have {} / {})",
            by_class[0].len(),
            by_class[1].len()
        )));
    }
    let mut rng = stream_rng(seed, crate::strategies::streams::FOLDS);
    let mut tests: Vec<Vec<usize>> = vec![vec![]; k];
    let mut next = 0;
    for class in &mut by_class {
        class.shuffle(&mut rng);
        for &i in class.iter() {
            tests[next].push(i);
            next = (next + 1) % k;
        }
    }
    Ok(tests
        .into_iter()
        .map(|mut test| {
            test.sort_unstable();
            let train = (0..labels.len())
                .filter(|i| test.binary_search(i).is_err())
                .collect();
            Fold { train, test }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairedTest {
    pub t: f64,
    pub df: usize,
    /// Two-sided p-value.
    pub p_two_sided: f64,
    /// One-sided p-value for `mean(a − b) > 0`.
    pub p_greater: f64,
}

/// Paired t-test on `a − b`. Zero-variance differences give `p = 1` when
/// the mean is zero and `p = 0` otherwise.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Invalid(format!(
            "paired test needs equal lengths >= 2 (got {} and {})",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let df = n - 1;
    if var == 0.0 {
        let (t, p2, pg) = if mean == 0.0 {
            (0.0, 1.0, 1.0)
        } else if mean > 0.0 {
            (f64::INFINITY, 0.0, 0.0)
        } else {
            (f64::NEG_INFINITY, 0.0, 1.0)
        };
        return Ok(PairedTest {
            t,
            df,
            p_two_sided: p2,
            p_greater: pg,
        });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::Invalid(e.to_string()))?;
    let upper = dist.sf(t);
    let lower = dist.cdf(t);
    Ok(PairedTest {
        t,
        df,
        p_two_sided: (2.0 * upper.min(lower)).min(1.0),
        p_greater: upper,
    })
}

/// Two-sided paired t-test p-value.
pub fn paired_significance(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(paired_t_test(a, b)?.p_two_sided)
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// Subject indices drawn from one task in one iteration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub support: Vec<usize>,
    pub query: Vec<usize>,
}

/// Pre-drawn batches: `iterations[it][task]`.
///
/// Generating the whole schedule up front from the seed lets different
/// strategies consume exactly the same samples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schedule {
    pub iterations: Vec<Vec<Batch>>,
}

impl Schedule {
    /// Each epoch shuffles every task once and cuts consecutive disjoint
    /// `support + query` windows from it. Iterations per epoch are set by the
    /// smallest task: `max(1, min_len / (support + query))`.
    pub fn episodic<R: Rng + ?Sized>(
        task_sizes: &[usize],
        support: usize,
        query: usize,
        epochs: usize,
        rng: &mut R,
    ) -> Result<Schedule> {
        if task_sizes.is_empty() {
            return Err(Error::Invalid("schedule over no tasks".into()));
        }
        let need = support + query;
        if query == 0 {
            return Err(Error::Invalid("query size must be at least 1".into()));
        }
        let min_len = *task_sizes.iter().min().expect("non-empty");
        if min_len < need {
            return Err(Error::Invalid(format!(
                "a task has {min_len} samples but support + query needs {need}"
            )));
        }
        let per_epoch = (min_len / need).max(1);
        let mut iterations = Vec::with_capacity(epochs * per_epoch);
        for _ in 0..epochs {
            let perms: Vec<Vec<usize>> = task_sizes
                .iter()
                .map(|&n| {
                    let mut p: Vec<usize> = (0..n).collect();
                    p.shuffle(rng);
                    p
                })
                .collect();
            for j in 0..per_epoch {
                let it = perms
                    .iter()
                    .map(|p| {
                        let w = &p[j * need..(j + 1) * need];
                        Batch {
                            support: w[..support].to_vec(),
                            query: w[support..].to_vec(),
                        }
                    })
                    .collect();
                iterations.push(it);
            }
        }
        Ok(Schedule { iterations })
    }

    /// Shuffled mini-batches covering one task each epoch (last batch may be short).
    pub fn minibatches<R: Rng + ?Sized>(
        n: usize,
        batch_size: usize,
        epochs: usize,
        rng: &mut R,
    ) -> Result<Schedule> {
        if n == 0 || batch_size == 0 {
            return Err(Error::Invalid(
                "mini-batches need samples and a positive batch size".into(),
            ));
        }
        let mut iterations = Vec::new();
        for _ in 0..epochs {
            let mut p: Vec<usize> = (0..n).collect();
            p.shuffle(rng);
            for chunk in p.chunks(batch_size) {
                iterations.push(vec![Batch {
                    support: vec![],
                    query: chunk.to_vec(),
                }]);
            }
        }
        Ok(Schedule { iterations })
    }

    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }

    pub fn task_count(&self) -> usize {
        self.iterations.first().map_or(0, Vec::len)
    }

    pub fn truncated(&self, steps: usize) -> Schedule {
        Schedule {
            iterations: self.iterations[..steps.min(self.len())].to_vec(),
        }
    }
}

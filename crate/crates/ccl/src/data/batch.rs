//! Per-step batch sampling.
//!
//! Each optimization step draws one batch per domain, indices sampled
//! uniformly and independently per (domain, step) from a seed-derived
//! stream. Sampling is a pure function of (seed, step), so a resumed run
//! continues with exactly the batches the uninterrupted run would have
//! seen.

use rand::Rng;

use super::{DataError, ImageTensor, LabelMap, MultiDomainDataset};
use crate::seeding;

/// Labeled source batch.
#[derive(Debug, Clone)]
pub struct SourceBatch<'a> {
    pub images: Vec<&'a ImageTensor>,
    pub labels: Vec<&'a LabelMap>,
    pub indices: Vec<usize>,
}

/// Unlabeled target batch. Labels are structurally absent: target train
/// samples never expose one through this interface.
#[derive(Debug, Clone)]
pub struct TargetBatch<'a> {
    pub images: Vec<&'a ImageTensor>,
    pub indices: Vec<usize>,
}

/// One batch per domain for a single optimization step.
#[derive(Debug, Clone)]
pub struct StepBatches<'a> {
    pub source: SourceBatch<'a>,
    pub targets: Vec<TargetBatch<'a>>,
}

fn sample_indices(len: usize, batch_size: usize, seed: u64, domain: usize, step: usize) -> Vec<usize> {
    let mut rng = seeding::rng(seed, "batch", domain as u64, step as u64);
    (0..batch_size).map(|_| rng.gen_range(0..len)).collect()
}

/// Batches for step `step`, deterministic in (seed, step).
pub fn batches_for_step(
    dataset: &MultiDomainDataset,
    batch_size: usize,
    seed: u64,
    step: usize,
) -> StepBatches<'_> {
    let src = dataset.source();
    let idx = sample_indices(src.len(), batch_size, seed, 0, step);
    let source = SourceBatch {
        images: idx.iter().map(|&i| &src[i].image).collect(),
        labels: idx.iter().map(|&i| src[i].label.as_ref().expect("source is labeled")).collect(),
        indices: idx,
    };
    let targets = (1..=dataset.num_targets())
        .map(|m| {
            let split = dataset.target_train(m);
            let idx = sample_indices(split.len(), batch_size, seed, m, step);
            TargetBatch {
                images: idx.iter().map(|&i| &split[i].image).collect(),
                indices: idx,
            }
        })
        .collect();
    StepBatches { source, targets }
}

/// Infinite deterministic stream of per-step batches.
pub struct BatchIterator<'a> {
    dataset: &'a MultiDomainDataset,
    batch_size: usize,
    seed: u64,
    step: usize,
}

impl<'a> BatchIterator<'a> {
    pub fn new(
        dataset: &'a MultiDomainDataset,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self, DataError> {
        if batch_size == 0 {
            return Err(DataError::ZeroBatch);
        }
        if batch_size > dataset.source().len() {
            return Err(DataError::BatchTooLarge {
                batch_size,
                len: dataset.source().len(),
                split: "train",
                domain: 0,
            });
        }
        for m in 1..=dataset.num_targets() {
            let len = dataset.target_train(m).len();
            if batch_size > len {
                return Err(DataError::BatchTooLarge { batch_size, len, split: "train", domain: m });
            }
        }
        Ok(Self { dataset, batch_size, seed, step: 0 })
    }

    /// Step index of the batch the next call to `next` will yield.
    pub fn step(&self) -> usize {
        self.step
    }
}

impl<'a> Iterator for BatchIterator<'a> {
    type Item = StepBatches<'a>;

    fn next(&mut self) -> Option<Self::Item> {
        let b = batches_for_step(self.dataset, self.batch_size, self.seed, self.step);
        self.step += 1;
        Some(b)
    }
}

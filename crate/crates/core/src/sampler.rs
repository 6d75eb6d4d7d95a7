//! Mixed-source batch sampling.
//!
//! Each batch first picks one dataset with probability proportional to its
//! size, takes `round(sigma * B)` samples from it, and fills the rest
//! uniformly from the union of the other datasets.

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::DatasetManifest;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Share of a batch drawn from the selected dataset, in [0, 1].
    pub sigma: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            sigma: 0.75,
            batch_size: 48,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.sigma) {
            return Err(Error::Config(format!("sigma {} outside [0, 1]", self.sigma)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// `p_n = |D_n| / sum_m |D_m|`.
pub fn dataset_probabilities(sizes: &[usize]) -> Result<Vec<f64>> {
    if sizes.is_empty() {
        return Err(Error::Empty("no datasets to sample from".into()));
    }
    if let Some(n) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::Empty(format!("dataset {n} is empty")));
    }
    let total: f64 = sizes.iter().map(|&s| s as f64).sum();
    Ok(sizes.iter().map(|&s| s as f64 / total).collect())
}

pub fn manifest_probabilities(manifest: &DatasetManifest) -> Result<Vec<f64>> {
    let sizes: Vec<usize> = manifest.datasets.iter().map(|d| d.size).collect();
    dataset_probabilities(&sizes)
}

/// `round(sigma * B)`, halves rounded up.
pub fn majority_count(sigma: f64, batch_size: usize) -> usize {
    ((sigma * batch_size as f64) + 0.5).floor() as usize
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchDraw {
    /// Global sample indices, shuffled.
    pub indices: Vec<usize>,
    /// Dataset the majority was drawn from.
    pub selected: usize,
    /// How many of `indices` came from `selected`.
    pub majority: usize,
}

/// `amount` distinct positions in `0..len` when possible, otherwise with
/// replacement.
fn positions(len: usize, amount: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if amount <= len {
        index::sample(rng, len, amount).into_vec()
    } else {
        log::warn!("pool of {len} smaller than {amount} requested draws; sampling with replacement");
        (0..amount).map(|_| rng.random_range(0..len)).collect()
    }
}

fn shuffle(items: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

fn pick(probabilities: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (n, p) in probabilities.iter().enumerate() {
        acc += p;
        if u < acc {
            return n;
        }
    }
    probabilities.len() - 1
}

/// Uniform draw of `batch_size` samples from the union of all pools.
pub fn draw_uniform(pools: &[Vec<usize>], batch_size: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    let union: Vec<usize> = pools.iter().flatten().copied().collect();
    if union.is_empty() {
        return Err(Error::Empty("no samples to draw from".into()));
    }
    let mut out: Vec<usize> = positions(union.len(), batch_size, rng)
        .into_iter()
        .map(|p| union[p])
        .collect();
    shuffle(&mut out, rng);
    Ok(out)
}

/// One mixed-source batch over per-dataset pools of global indices.
pub fn draw_batch(pools: &[Vec<usize>], config: &SamplerConfig, rng: &mut ChaCha8Rng) -> Result<BatchDraw> {
    config.validate()?;
    let sizes: Vec<usize> = pools.iter().map(|p| p.len()).collect();
    let probabilities = dataset_probabilities(&sizes)?;
    let b = config.batch_size;
    if pools.len() == 1 {
        return Ok(BatchDraw {
            indices: draw_uniform(pools, b, rng)?,
            selected: 0,
            majority: b,
        });
    }

    let selected = pick(&probabilities, rng);
    let majority = majority_count(config.sigma, b);
    let pool = &pools[selected];
    let mut out: Vec<usize> = positions(pool.len(), majority, rng)
        .into_iter()
        .map(|p| pool[p])
        .collect();
    let rest: Vec<usize> = pools
        .iter()
        .enumerate()
        .filter(|(n, _)| *n != selected)
        .flat_map(|(_, p)| p.iter().copied())
        .collect();
    out.extend(positions(rest.len(), b - majority, rng).into_iter().map(|p| rest[p]));
    shuffle(&mut out, rng);
    Ok(BatchDraw {
        indices: out,
        selected,
        majority,
    })
}

/// Pools covering every sample of every dataset in a manifest.
pub fn manifest_pools(manifest: &DatasetManifest) -> Vec<Vec<usize>> {
    manifest.ranges().into_iter().map(|r| r.collect()).collect()
}

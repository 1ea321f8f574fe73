//! Training batches, optionally produced by background workers.
//!
//! Batch `i` is always drawn from an RNG seeded with `derive_seed(seed, i)`,
//! so the sample sequence does not depend on how many workers produce it.

use std::sync::mpsc::{sync_channel, Receiver};
use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

use super::{derive_seed, sample_patch, DataError, ImagePair, PatchConfig};

#[derive(Debug, Clone)]
pub struct Batch {
    pub step: u64,
    /// `N×3×p×p`.
    pub lr: Tensor<f32>,
    /// `N×3×ps×ps`.
    pub hr: Tensor<f32>,
}

/// Draws the batch for `step`.
pub fn sample_batch(pairs: &[ImagePair], cfg: &PatchConfig, batch: usize, step: u64) -> Result<Batch, DataError> {
    if pairs.is_empty() {
        return Err(DataError::Config("no training pairs".into()));
    }
    if batch == 0 {
        return Err(DataError::Config("batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, step));
    let mut lrs = Vec::with_capacity(batch);
    let mut hrs = Vec::with_capacity(batch);
    for _ in 0..batch {
        let pair = &pairs[rng.random_range(0..pairs.len())];
        let p = sample_patch(&pair.hr, &pair.lr, cfg, &mut rng)?;
        lrs.push(p.lr);
        hrs.push(p.hr);
    }
    Ok(Batch {
        step,
        lr: Tensor::stack(&lrs)?,
        hr: Tensor::stack(&hrs)?,
    })
}

/// Calls `consume` on the batches for steps `start..start + count` in order.
///
/// With `workers > 0` the batches are sampled on that many scoped threads, each
/// feeding a channel bounded at `depth`; with `workers == 0` they are sampled
/// inline. The first error from either side stops the loop.
pub fn for_each_batch<E>(
    pairs: &[ImagePair],
    cfg: &PatchConfig,
    batch: usize,
    start: u64,
    count: u64,
    workers: usize,
    depth: usize,
    mut consume: impl FnMut(Batch) -> Result<(), E>,
) -> Result<(), E>
where
    E: From<DataError>,
{
    if workers == 0 {
        for step in start..start + count {
            consume(sample_batch(pairs, cfg, batch, step)?)?;
        }
        return Ok(());
    }
    thread::scope(|scope| {
        let receivers: Vec<Receiver<Result<Batch, DataError>>> = (0..workers)
            .map(|w| {
                let (tx, rx) = sync_channel(depth.max(1));
                scope.spawn(move || {
                    let mut step = start + w as u64;
                    while step < start + count {
                        if tx.send(sample_batch(pairs, cfg, batch, step)).is_err() {
                            break;
                        }
                        step += workers as u64;
                    }
                });
                rx
            })
            .collect();
        for i in 0..count {
            let item = receivers[(i % workers as u64) as usize]
                .recv()
                .expect("worker exits only after sending its share");
            consume(item?)?;
        }
        Ok(())
    })
}

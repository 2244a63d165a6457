use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{Error, Result};

/// Partitions whole spatial blocks into `(train, test)`.
///
/// Blocks are shuffled with `seed`; the test side takes the shuffled prefix
/// whose cumulative sample share is closest to `test_fraction`, keeping at
/// least one block on each side.
pub fn split_spatial(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Split(format!(
            "test_fraction {test_fraction} outside (0, 1)"
        )));
    }
    let mut sizes: BTreeMap<u32, usize> = BTreeMap::new();
    for s in &ds.samples {
        *sizes.entry(s.block_id).or_default() += 1;
    }
    if sizes.len() < 2 {
        return Err(Error::Split(format!(
            "need at least two spatial blocks, found {}",
            sizes.len()
        )));
    }

    let mut blocks: Vec<(u32, usize)> = sizes.into_iter().collect();
    blocks.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let total = ds.len() as f64;
    let mut best = (1, f64::INFINITY);
    let mut cumulative = 0usize;
    for (k, (_, n)) in blocks.iter().enumerate().take(blocks.len() - 1) {
        cumulative += n;
        let gap = (cumulative as f64 / total - test_fraction).abs();
        if gap < best.1 {
            best = (k + 1, gap);
        }
    }
    let test_blocks: Vec<u32> = blocks[..best.0].iter().map(|(b, _)| *b).collect();

    let (test, train): (Vec<_>, Vec<_>) = ds
        .samples
        .iter()
        .cloned()
        .partition(|s| test_blocks.contains(&s.block_id));
    Ok((ds.with_samples(train), ds.with_samples(test)))
}

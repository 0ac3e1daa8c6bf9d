use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// `k` folds over a seeded shuffle of `0..n`, cut into `k` near-equal
/// blocks. Fold `i` tests on block `i`, validates on block `i + 1 (mod k)`
/// and trains on the rest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Fold>,
}

pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<FoldSplit> {
    if k < 3 {
        return Err(Error::InvalidInput(format!("k must be at least 3 for train/validation/test blocks, got {k}")));
    }
    if n < 2 * k {
        return Err(Error::InvalidInput(format!("{n} samples are too few for {k} folds (need at least {})", 2 * k)));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut blocks = Vec::with_capacity(k);
    let mut start = 0;
    for b in 0..k {
        let size = n / k + usize::from(b < n % k);
        blocks.push(order[start..start + size].to_vec());
        start += size;
    }
    let folds = (0..k)
        .map(|i| {
            let v = (i + 1) % k;
            let train = (0..k)
                .filter(|&b| b != i && b != v)
                .flat_map(|b| blocks[b].iter().copied())
                .collect();
            Fold {
                train,
                val: blocks[v].clone(),
                test: blocks[i].clone(),
            }
        })
        .collect();
    Ok(FoldSplit { k, seed, folds })
}

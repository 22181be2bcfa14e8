use serde::{Deserialize, Serialize};

use crate::data::EmbeddingSet;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// A K-shot split: exactly `shots` training samples per class, the rest
/// held out for testing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotTask {
    pub train: EmbeddingSet,
    pub test: EmbeddingSet,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub shots: usize,
    pub seed: u64,
}

/// Draws `shots` samples per class without replacement. Class `c` uses the
/// few-shot stream `c` of `seed` and a partial Fisher–Yates pass over its
/// indices in file order; chosen indices are then sorted.
pub fn sample_few_shot(set: &EmbeddingSet, shots: usize, seed: u64) -> Result<FewShotTask> {
    if shots == 0 {
        return Err(Error::InvalidConfig("shots must be at least 1".into()));
    }
    let groups = set.indices_by_class();
    let mut train_indices = Vec::with_capacity(shots * groups.len());
    let mut in_train = vec![false; set.len()];
    for (class, mut idx) in groups.into_iter().enumerate() {
        if idx.len() <= shots {
            return Err(Error::InsufficientSamples {
                class,
                available: idx.len(),
                shots,
            });
        }
        let mut rng = rng::stream(seed, Purpose::FewShotSplit, class as u64);
        let n = idx.len();
        for i in 0..shots {
            let j = i + rng::bounded(&mut rng, n - i);
            idx.swap(i, j);
        }
        let mut chosen = idx[..shots].to_vec();
        chosen.sort_unstable();
        for &i in &chosen {
            in_train[i] = true;
        }
        train_indices.extend(chosen);
    }
    let test_indices: Vec<usize> = (0..set.len()).filter(|&i| !in_train[i]).collect();
    Ok(FewShotTask {
        train: set.subset(&train_indices)?,
        test: set.subset(&test_indices)?,
        train_indices,
        test_indices,
        shots,
        seed,
    })
}

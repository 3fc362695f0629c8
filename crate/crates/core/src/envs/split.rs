//! Train/test partitions of a domain's instances.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::fixtures;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitPlan {
    pub seed: u64,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl SplitPlan {
    /// Seeded random partition with `train_size` training instances. Both
    /// sides keep the original instance order.
    pub fn new(ids: &[String], train_size: usize, seed: u64) -> Self {
        assert!(train_size <= ids.len(), "train split larger than the domain");
        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.shuffle(&mut fixtures::rng(seed));
        let mut in_train = vec![false; ids.len()];
        for &i in &order[..train_size] {
            in_train[i] = true;
        }
        let pick = |want: bool| {
            ids.iter()
                .zip(&in_train)
                .filter(|(_, &t)| t == want)
                .map(|(id, _)| id.clone())
                .collect()
        };
        Self {
            seed,
            train: pick(true),
            test: pick(false),
        }
    }

    /// Five 50/50 splits seeded `base_seed .. base_seed + 5`.
    pub fn standard(ids: &[String], base_seed: u64) -> Vec<Self> {
        (0..5).map(|k| Self::new(ids, ids.len() / 2, base_seed + k)).collect()
    }
}

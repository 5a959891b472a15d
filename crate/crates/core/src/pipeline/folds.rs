use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Subject-to-fold map for k-fold cross-validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub seed: u64,
    pub assignment: BTreeMap<String, usize>,
}

impl FoldAssignment {
    /// Subjects of each fold, in the order the shuffle placed them.
    pub fn folds(&self, order: &[String]) -> Vec<Vec<String>> {
        let mut out = vec![Vec::new(); self.k];
        for id in order {
            if let Some(&f) = self.assignment.get(id) {
                out[f].push(id.clone());
            }
        }
        out
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignment.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Seeded shuffle followed by round-robin assignment, so fold sizes differ
/// by at most one.
pub fn split_folds(subject_ids: &[String], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k == 0 {
        return Err(Error::invalid("fold count must be positive"));
    }
    if k > subject_ids.len() {
        return Err(Error::invalid(format!(
            "cannot split {} subjects into {k} folds",
            subject_ids.len()
        )));
    }
    let mut shuffled = subject_ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = BTreeMap::new();
    for (i, id) in shuffled.into_iter().enumerate() {
        if assignment.insert(id.clone(), i % k).is_some() {
            return Err(Error::invalid(format!("duplicate subject id {id:?}")));
        }
    }
    Ok(FoldAssignment { k, seed, assignment })
}

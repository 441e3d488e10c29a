use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Subject-level partition for one repetition of k-fold cross-validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub repetition: usize,
    pub folds: Vec<Vec<String>>,
}

/// Shuffles the (sorted, deduplicated) subjects with a stream keyed by
/// `(seed, repetition)` and cuts them into `k` folds whose sizes differ by at most one.
pub fn split_folds(subject_ids: &[String], k: usize, seed: u64, repetition: usize) -> Result<FoldPlan> {
    let mut ids: Vec<String> = subject_ids.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if k < 2 || ids.len() < k {
        return Err(Error::invalid(format!("cannot split {} subjects into {k} folds", ids.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(repetition as u64);
    ids.shuffle(&mut rng);
    let (base, extra) = (ids.len() / k, ids.len() % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(ids[start..start + len].to_vec());
        start += len;
    }
    Ok(FoldPlan { k, seed, repetition, folds })
}

impl FoldPlan {
    /// `(train, validation)` subject sets with fold `f` held out.
    pub fn split(&self, f: usize) -> (BTreeSet<String>, BTreeSet<String>) {
        let val: BTreeSet<String> = self.folds[f].iter().cloned().collect();
        let train =
            self.folds.iter().enumerate().filter(|(i, _)| *i != f).flat_map(|(_, s)| s.iter().cloned()).collect();
        (train, val)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subjects(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("S{i:04}")).collect()
    }

    #[test]
    fn even_partition_and_determinism() {
        let s = subjects(100);
        let p = split_folds(&s, 10, 5, 0).unwrap();
        assert!(p.folds.iter().all(|f| f.len() == 10));
        let all: BTreeSet<&String> = p.folds.iter().flatten().collect();
        assert_eq!(all.len(), 100);
        assert_eq!(p, split_folds(&s, 10, 5, 0).unwrap());
        assert_ne!(p.folds, split_folds(&s, 10, 5, 1).unwrap().folds);
        let (tr, va) = p.split(3);
        assert_eq!((tr.len(), va.len()), (90, 10));
        assert!(tr.is_disjoint(&va));
    }

    #[test]
    fn uneven_and_too_few() {
        let p = split_folds(&subjects(23), 5, 1, 0).unwrap();
        let sizes: Vec<usize> = p.folds.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![5, 5, 5, 4, 4]);
        assert!(split_folds(&subjects(3), 5, 1, 0).is_err());
    }
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaResult {
    pub kappa: f64,
    pub observed: f64,
    pub chance: f64,
}

/// Cohen's kappa between two raters over any ordered label type. When chance
/// agreement is 1 (both raters constant and equal) kappa is defined as 1.
pub fn cohens_kappa<T: Ord>(a: &[T], b: &[T]) -> Result<KappaResult> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("rating vectors differ in length: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::invalid("kappa needs at least one rated case"));
    }
    let n = a.len() as f64;
    let mut ma: BTreeMap<&T, usize> = BTreeMap::new();
    let mut mb: BTreeMap<&T, usize> = BTreeMap::new();
    let mut agree = 0usize;
    for (x, y) in a.iter().zip(b) {
        *ma.entry(x).or_default() += 1;
        *mb.entry(y).or_default() += 1;
        agree += usize::from(x == y);
    }
    let observed = agree as f64 / n;
    let chance: f64 = ma.iter().map(|(k, &ca)| ca as f64 / n * mb.get(k).copied().unwrap_or(0) as f64 / n).sum();
    let kappa = if chance >= 1.0 { 1.0 } else { (observed - chance) / (1.0 - chance) };
    Ok(KappaResult { kappa, observed, chance })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contingency_fixtures() {
        assert_eq!(cohens_kappa(&[1, 2, 3, 1], &[1, 2, 3, 1]).unwrap().kappa, 1.0);
        let k = cohens_kappa(&[1, 1, 2, 2], &[1, 2, 1, 2]).unwrap();
        assert_eq!((k.observed, k.chance, k.kappa), (0.5, 0.5, 0.0));
        let k = cohens_kappa(&[1, 1, 1], &[2, 2, 2]).unwrap();
        assert_eq!((k.observed, k.chance, k.kappa), (0.0, 0.0, 0.0));
        assert_eq!(cohens_kappa(&[4, 4], &[4, 4]).unwrap().kappa, 1.0);
        assert!(cohens_kappa(&[1], &[1, 2]).is_err());
    }
}

//! Case-resampling bootstrap confidence intervals and paired comparisons.
//!
//! Resample `b` draws its case indices from a ChaCha8 stream seeded by
//! `(seed, b)`, so results do not depend on how resamples are scheduled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    /// `[2 t - q_hi, 2 t - q_lo]`, i.e. the observed value plus percentiles of `t - t*`.
    #[default]
    Basic,
    Percentile,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub n_resamples: usize,
    pub seed: u64,
    pub method: CiMethod,
    /// Two-sided level; 0.05 gives the 2.5th and 97.5th percentiles.
    pub alpha: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { n_resamples: 10_000, seed: 0, method: CiMethod::Basic, alpha: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    pub n_resamples: usize,
    pub seed: u64,
    pub method: CiMethod,
    /// Resamples on which the metric was undefined (dropped).
    pub n_undefined: usize,
    /// False when a basic interval fails to contain the point estimate.
    pub contains_point: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub p_value: f64,
    pub mean_difference: f64,
    pub sd_difference: f64,
    pub n_resamples: usize,
    /// All resampled differences were identical; `p` is 1 when they are all
    /// zero and 0 otherwise.
    pub degenerate: bool,
}

/// Case indices of resample `b`.
pub fn resample_indices(n_cases: usize, seed: u64, b: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b as u64);
    (0..n_cases).map(|_| rng.random_range(0..n_cases)).collect()
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Metric evaluated on each resample (in resample order); `None` marks an undefined value.
pub fn bootstrap_replicates<F>(n_cases: usize, metric: F, n_resamples: usize, seed: u64) -> Vec<Option<f64>>
where
    F: Fn(&[usize]) -> Option<f64> + Sync,
{
    (0..n_resamples).into_par_iter().map(|b| metric(&resample_indices(n_cases, seed, b))).collect()
}

/// Bootstrap CI of `metric`, which receives the case indices of a sample
/// (the identity sample for the point estimate).
pub fn bootstrap_ci<F>(n_cases: usize, metric: F, cfg: &BootstrapConfig) -> Result<BootstrapCi>
where
    F: Fn(&[usize]) -> Option<f64> + Sync,
{
    if n_cases < 2 {
        return Err(Error::invalid("bootstrap needs at least 2 cases"));
    }
    if cfg.n_resamples == 0 || !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::invalid("bootstrap needs resamples and 0 < alpha < 1"));
    }
    let all: Vec<usize> = (0..n_cases).collect();
    let point = metric(&all).ok_or_else(|| Error::Undefined("metric undefined on the observed sample".into()))?;
    let reps = bootstrap_replicates(n_cases, &metric, cfg.n_resamples, cfg.seed);
    let mut vals: Vec<f64> = reps.iter().flatten().copied().collect();
    let n_undefined = cfg.n_resamples - vals.len();
    if 2 * n_undefined > cfg.n_resamples {
        return Err(Error::Undefined(format!("metric undefined on {n_undefined} of {} resamples", cfg.n_resamples)));
    }
    vals.sort_by(f64::total_cmp);
    let q_lo = quantile_sorted(&vals, cfg.alpha / 2.0);
    let q_hi = quantile_sorted(&vals, 1.0 - cfg.alpha / 2.0);
    let (lo, hi) = match cfg.method {
        CiMethod::Basic => (2.0 * point - q_hi, 2.0 * point - q_lo),
        CiMethod::Percentile => (q_lo, q_hi),
    };
    Ok(BootstrapCi {
        point,
        lo,
        hi,
        n_resamples: cfg.n_resamples,
        seed: cfg.seed,
        method: cfg.method,
        n_undefined,
        contains_point: lo <= point && point <= hi,
    })
}

/// Paired bootstrap: each resample evaluates both metrics on the same cases;
/// a two-sided one-sample t-test checks the mean difference against 0.
pub fn bootstrap_compare<A, B>(
    n_cases: usize,
    metric_a: A,
    metric_b: B,
    n_resamples: usize,
    seed: u64,
) -> Result<PairedComparison>
where
    A: Fn(&[usize]) -> Option<f64> + Sync,
    B: Fn(&[usize]) -> Option<f64> + Sync,
{
    if n_cases < 2 || n_resamples < 2 {
        return Err(Error::invalid("paired bootstrap needs at least 2 cases and 2 resamples"));
    }
    let diffs: Vec<Option<f64>> = (0..n_resamples)
        .into_par_iter()
        .map(|b| {
            let idx = resample_indices(n_cases, seed, b);
            Some(metric_a(&idx)? - metric_b(&idx)?)
        })
        .collect();
    let d: Vec<f64> = diffs.into_iter().flatten().collect();
    if 2 * (n_resamples - d.len()) > n_resamples || d.len() < 2 {
        return Err(Error::Undefined("metric difference undefined on most resamples".into()));
    }
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    let degenerate = d.iter().all(|&x| x == d[0]);
    let p_value = if degenerate {
        if mean == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        let t = mean / (sd / n.sqrt());
        let dist = StudentsT::new(0.0, 1.0, n - 1.0).expect("valid degrees of freedom");
        (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
    };
    Ok(PairedComparison { p_value, mean_difference: mean, sd_difference: sd, n_resamples: d.len(), degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn accuracy(correct: &[bool]) -> impl Fn(&[usize]) -> Option<f64> + Sync + '_ {
        move |idx: &[usize]| Some(idx.iter().filter(|&&i| correct[i]).count() as f64 / idx.len() as f64)
    }

    #[test]
    fn zero_variance_and_determinism() {
        let all = [true; 12];
        let cfg = BootstrapConfig { n_resamples: 500, seed: 3, ..Default::default() };
        let ci = bootstrap_ci(12, accuracy(&all), &cfg).unwrap();
        assert_eq!((ci.lo, ci.point, ci.hi), (1.0, 1.0, 1.0));
        let mixed = [true, false, true, true, false, true, true, true, false, true];
        let a = bootstrap_ci(10, accuracy(&mixed), &cfg).unwrap();
        let b = bootstrap_ci(10, accuracy(&mixed), &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.lo < a.point && a.point < a.hi);
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert_eq!(quantile_sorted(&v, 0.875), 4.5);
    }

    #[test]
    fn mostly_undefined_metric_is_rejected() {
        let cfg = BootstrapConfig { n_resamples: 50, ..Default::default() };
        let r = bootstrap_ci(5, |idx: &[usize]| if idx == [0, 1, 2, 3, 4] { Some(1.0) } else { None }, &cfg);
        assert!(matches!(r, Err(Error::Undefined(_))));
    }

    #[test]
    fn paired_comparison_extremes() {
        let good = [true; 10];
        let bad = [false; 10];
        let same = bootstrap_compare(10, accuracy(&good), accuracy(&good), 200, 1).unwrap();
        assert!(same.degenerate && same.p_value == 1.0);
        let apart = bootstrap_compare(10, accuracy(&good), accuracy(&bad), 200, 1).unwrap();
        assert!(apart.p_value < 0.01);
    }
}

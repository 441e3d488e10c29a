use serde::{Deserialize, Serialize};

use crate::classification::Stage;

pub const N_DECILES: usize = 10;

/// Decile histograms of one-vs-rest output probabilities, split by whether
/// the binary decision at 0.5 was correct. Each panel is in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyHistogram {
    pub correct: [f64; N_DECILES],
    pub incorrect: [f64; N_DECILES],
    pub n_correct: usize,
    pub n_incorrect: usize,
}

/// `[0, 0.1) -> 0`, ..., `[0.9, 1] -> 9`.
pub fn decile(p: f64) -> usize {
    ((p * N_DECILES as f64).floor().max(0.0) as usize).min(N_DECILES - 1)
}

/// Every case contributes one binary decision per stage: the stage's
/// probability against the label "true stage is this one".
pub fn uncertainty_histogram(stage_probs: &[[f64; Stage::COUNT]], truth: &[Stage]) -> UncertaintyHistogram {
    assert_eq!(stage_probs.len(), truth.len(), "one label per case");
    let mut correct = [0usize; N_DECILES];
    let mut incorrect = [0usize; N_DECILES];
    for (probs, t) in stage_probs.iter().zip(truth) {
        for s in Stage::ALL {
            let p = probs[s.index()];
            let hit = (p >= 0.5) == (s == *t);
            let bucket = if hit { &mut correct } else { &mut incorrect };
            bucket[decile(p)] += 1;
        }
    }
    let pct = |c: &[usize; N_DECILES]| -> [f64; N_DECILES] {
        let total: usize = c.iter().sum();
        std::array::from_fn(|i| if total == 0 { 0.0 } else { 100.0 * c[i] as f64 / total as f64 })
    };
    UncertaintyHistogram {
        correct: pct(&correct),
        incorrect: pct(&incorrect),
        n_correct: correct.iter().sum(),
        n_incorrect: incorrect.iter().sum(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_convention() {
        assert_eq!(decile(0.5), 5);
        assert_eq!(decile(1.0), 9);
        assert_eq!(decile(0.0999), 0);
        let h = uncertainty_histogram(&[[0.5; 4]], &[Stage::II]);
        assert_eq!(h.correct[5] + h.incorrect[5], 200.0);
        assert_eq!((h.n_correct, h.n_incorrect), (1, 3));
    }

    #[test]
    fn confident_correct_cases() {
        let h = uncertainty_histogram(&[[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]], &[Stage::Absence, Stage::III]);
        assert_eq!(h.n_incorrect, 0);
        // true-class decisions sit in the top decile, the rejected rest in the bottom one
        assert_eq!(h.correct[9], 25.0);
        assert_eq!(h.correct[0], 75.0);
        assert_eq!(h.incorrect, [0.0; 10]);
    }
}

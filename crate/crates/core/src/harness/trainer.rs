use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::nn::{Adam, Grads, ParamStore};

/// A model bound to its training and validation data.
pub trait Trainable {
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    fn n_train(&self) -> usize;
    /// Mean training loss and gradients over the listed training examples.
    /// `rng` drives augmentation.
    fn batch_grads(&mut self, indices: &[usize], rng: &mut ChaCha8Rng) -> Result<(f64, Grads)>;
    /// Mean loss over the validation examples in inference mode.
    fn validation_loss(&self) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
    pub best: bool,
}

/// Per-epoch record of one training run. Contains no timings, so equal seeds
/// give byte-identical serialisations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub task: String,
    pub seed: u64,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub initial_train_loss: f64,
    pub stopped_early: bool,
}

impl TrainLog {
    pub fn lr_trace(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.lr).collect()
    }

    pub fn final_train_loss(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |e| e.train_loss)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("log serialises")
    }
}

/// Adam with plateau halving on validation loss. The parameters of the best
/// validation epoch are restored before returning.
pub fn fit<T: Trainable>(model: &mut T, cfg: &TrainConfig) -> Result<TrainLog> {
    cfg.validate()?;
    let n = model.n_train();
    if n == 0 {
        return Err(Error::invalid(format!("{}: no training examples", cfg.task.name())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x51ed_270b);
    let mut adam = Adam::new(model.store(), cfg.lr, cfg.weight_decay);
    let initial_val = model.validation_loss()?;
    check_finite(initial_val, 0, "initial validation loss")?;
    let mut best_val = initial_val;
    let mut best_store = model.store().clone();
    let mut best_epoch = 0;
    let (mut stale, mut since_best) = (0usize, 0usize);
    let mut epochs = Vec::with_capacity(cfg.max_epochs);
    let mut initial_train_loss = f64::NAN;
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut count) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let (loss, grads) = model.batch_grads(chunk, &mut rng)?;
            check_finite(loss, epoch, "training loss")?;
            if !grads.is_finite() {
                return Err(Error::Diverged { epoch, detail: "non-finite gradient".into() });
            }
            if initial_train_loss.is_nan() {
                initial_train_loss = loss;
            }
            adam.step(model.store_mut(), &grads);
            sum += loss * chunk.len() as f64;
            count += chunk.len();
        }
        let val = model.validation_loss()?;
        check_finite(val, epoch, "validation loss")?;
        let lr = adam.lr;
        let improved = val < best_val - cfg.min_delta;
        if improved {
            best_val = val;
            best_store = model.store().clone();
            best_epoch = epoch;
            stale = 0;
            since_best = 0;
        } else {
            stale += 1;
            since_best += 1;
            if stale >= cfg.patience {
                adam.lr *= 0.5;
                stale = 0;
            }
        }
        log::debug!("{} epoch {epoch}: train {:.5} val {val:.5} lr {lr:.2e}", cfg.task.name(), sum / count as f64);
        epochs.push(EpochLog { epoch, train_loss: sum / count as f64, val_loss: val, lr, best: improved });
        if cfg.early_stop > 0 && since_best >= cfg.early_stop {
            stopped_early = true;
            break;
        }
    }
    *model.store_mut() = best_store;
    Ok(TrainLog {
        task: cfg.task.name().into(),
        seed: cfg.seed,
        epochs,
        best_epoch,
        best_val_loss: best_val,
        initial_train_loss,
        stopped_early,
    })
}

fn check_finite(v: f64, epoch: usize, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged { epoch, detail: format!("{what} is {v}") })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::Task;

    /// Least squares on one scalar weight: loss = mean (w x - y)^2.
    struct Line {
        store: ParamStore,
        xs: Vec<f64>,
        ys: Vec<f64>,
        val: Vec<(f64, f64)>,
    }

    impl Line {
        fn new(noise_val: bool) -> Self {
            let mut store = ParamStore::new();
            store.add("w", vec![1], true, vec![0.0]);
            let xs: Vec<f64> = (0..16).map(|i| i as f64 / 8.0 - 1.0).collect();
            let ys = xs.iter().map(|x| 3.0 * x).collect();
            let val = if noise_val { vec![(1.0, 0.0)] } else { vec![(0.5, 1.5), (-1.0, -3.0)] };
            Self { store, xs, ys, val }
        }
        fn w(&self) -> f64 {
            self.store.params()[0].value[0] as f64
        }
    }

    impl Trainable for Line {
        fn store(&self) -> &ParamStore {
            &self.store
        }
        fn store_mut(&mut self) -> &mut ParamStore {
            &mut self.store
        }
        fn n_train(&self) -> usize {
            self.xs.len()
        }
        fn batch_grads(&mut self, idx: &[usize], _: &mut ChaCha8Rng) -> Result<(f64, Grads)> {
            let w = self.w();
            let (mut l, mut g) = (0.0, 0.0);
            for &i in idx {
                let r = w * self.xs[i] - self.ys[i];
                l += r * r;
                g += 2.0 * r * self.xs[i];
            }
            let k = idx.len() as f64;
            Ok((l / k, Grads(vec![vec![(g / k) as f32]])))
        }
        fn validation_loss(&self) -> Result<f64> {
            let w = self.w();
            Ok(self.val.iter().map(|(x, y)| (w * x - y).powi(2)).sum::<f64>() / self.val.len() as f64)
        }
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            task: Task::Side,
            lr: 0.1,
            weight_decay: 0.0,
            patience: 2,
            max_epochs: 40,
            batch_size: 4,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn converges_and_schedule_halves() {
        let mut m = Line::new(false);
        let log = fit(&mut m, &cfg()).unwrap();
        assert!((m.w() - 3.0).abs() < 0.05, "w = {}", m.w());
        let lr = log.lr_trace();
        for pair in lr.windows(2) {
            assert!(pair[1] == pair[0] || pair[1] == 0.5 * pair[0]);
        }
        assert!(log.best_val_loss < 1e-2);
    }

    #[test]
    fn plateau_halves_and_restores_best() {
        // validation prefers w = 0, training drives w to 3
        let mut m = Line::new(true);
        let log = fit(&mut m, &TrainConfig { max_epochs: 12, ..cfg() }).unwrap();
        assert_eq!(log.best_epoch, 0);
        assert_eq!(m.w(), 0.0);
        let lr = log.lr_trace();
        assert_eq!(lr[..6], [0.1, 0.1, 0.05, 0.05, 0.025, 0.025]);
    }

    #[test]
    fn identical_seeds_identical_logs() {
        let a = fit(&mut Line::new(false), &cfg()).unwrap().to_json();
        let b = fit(&mut Line::new(false), &cfg()).unwrap().to_json();
        assert_eq!(a, b);
    }

    #[test]
    fn early_stop() {
        let mut m = Line::new(true);
        let log = fit(&mut m, &TrainConfig { early_stop: 3, ..cfg() }).unwrap();
        assert!(log.stopped_early);
        assert_eq!(log.epochs.len(), 3);
    }

    #[test]
    fn nan_aborts() {
        let mut m = Line::new(false);
        m.ys[0] = f64::NAN;
        match fit(&mut m, &cfg()) {
            Err(Error::Diverged { epoch: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
    }
}

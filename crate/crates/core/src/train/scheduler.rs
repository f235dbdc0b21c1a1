use serde::{Deserialize, Serialize};

/// Divides the learning rate when the monitored metric (maximized) has not
/// strictly improved for `patience` consecutive epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub best: f64,
    pub stale_epochs: usize,
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
}

impl PlateauScheduler {
    pub fn new(lr: f64) -> Self {
        PlateauScheduler { lr, best: f64::NEG_INFINITY, stale_epochs: 0, factor: 2.0, patience: 10, min_lr: 1e-6 }
    }

    /// Records one epoch's metric and returns the learning rate for the next.
    pub fn step(&mut self, metric: f64) -> f64 {
        if metric > self.best {
            self.best = metric;
            self.stale_epochs = 0;
        } else {
            self.stale_epochs += 1;
            if self.stale_epochs >= self.patience {
                self.lr = (self.lr / self.factor).max(self.min_lr);
                self.stale_epochs = 0;
            }
        }
        self.lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn halves_after_ten_stale_epochs() {
        let mut s = PlateauScheduler::new(1e-4);
        s.step(0.5);
        for i in 0..9 {
            assert_eq!(s.step(0.5), 1e-4, "epoch {i}");
        }
        assert_eq!(s.step(0.4), 5e-5);
        assert_eq!(s.stale_epochs, 0);
    }

    #[test]
    fn improving_sequence_keeps_lr() {
        let mut s = PlateauScheduler::new(1e-4);
        for i in 0..50 {
            assert_eq!(s.step(i as f64 / 50.0), 1e-4);
        }
    }

    #[test]
    fn floors_at_min_lr() {
        let mut s = PlateauScheduler::new(1e-4);
        for _ in 0..1000 {
            s.step(0.0);
        }
        assert_eq!(s.lr, 1e-6);
    }

    proptest! {
        #[test]
        fn lr_never_rises_and_stays_in_range(metrics in proptest::collection::vec(0.0f64..1.0, 1..300)) {
            let mut s = PlateauScheduler::new(1e-4);
            let mut prev = s.lr;
            for m in metrics {
                let lr = s.step(m);
                prop_assert!(lr <= prev && lr >= 1e-6 && lr <= 1e-4);
                prev = lr;
            }
        }
    }
}

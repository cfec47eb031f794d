/// Patience-based early stopping on a validation loss.
///
/// An epoch improves only when its loss is lower than the best seen so far
/// by at least `min_delta`; training stops after `patience` consecutive
/// epochs without improvement.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    best: f64,
    best_epoch: Option<usize>,
    stale: usize,
    epoch: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    /// New best: keep these weights.
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            min_delta: 1e-6,
            best: f64::INFINITY,
            best_epoch: None,
            stale: 0,
            epoch: 0,
        }
    }

    pub fn observe(&mut self, val_loss: f64) -> Verdict {
        self.epoch += 1;
        if val_loss < self.best - self.min_delta {
            self.best = val_loss;
            self.best_epoch = Some(self.epoch);
            self.stale = 0;
            return Verdict::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            Verdict::Stop
        } else {
            Verdict::Continue
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// 1-based epoch of the best loss.
    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }
}

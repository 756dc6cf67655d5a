//! Per-thread call counters for the distributional code paths.
//!
//! Training is single-threaded, so a snapshot taken before and after a run on
//! the same thread tells exactly which paths the run exercised.

use std::cell::Cell;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    /// Quantile value functions constructed.
    pub quantile_builds: u64,
    /// Quantile forward passes (single or batched).
    pub quantile_predictions: u64,
    /// Quantile loss/gradient evaluations.
    pub quantile_fits: u64,
    /// Normal fits and uncertainty-error evaluations.
    pub uncertainty_evals: u64,
    /// Target bar constructions (normal or Bellman).
    pub target_builds: u64,
}

impl Counters {
    pub fn since(&self, earlier: &Counters) -> Counters {
        Counters {
            quantile_builds: self.quantile_builds - earlier.quantile_builds,
            quantile_predictions: self.quantile_predictions - earlier.quantile_predictions,
            quantile_fits: self.quantile_fits - earlier.quantile_fits,
            uncertainty_evals: self.uncertainty_evals - earlier.uncertainty_evals,
            target_builds: self.target_builds - earlier.target_builds,
        }
    }

    pub fn total(&self) -> u64 {
        self.quantile_builds + self.quantile_predictions + self.quantile_fits + self.uncertainty_evals + self.target_builds
    }
}

thread_local! {
    static COUNTERS: Cell<Counters> = Cell::new(Counters::default());
}

pub fn snapshot() -> Counters {
    COUNTERS.with(|c| c.get())
}

pub(crate) fn bump(f: impl FnOnce(&mut Counters)) {
    COUNTERS.with(|c| {
        let mut v = c.get();
        f(&mut v);
        c.set(v);
    });
}

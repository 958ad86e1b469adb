//! Stochastic weight averaging over epoch-end snapshots.

use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SwaState {
    mean: Vec<f64>,
    count: usize,
}

impl SwaState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Folds the current parameters into the running mean.
    pub fn update(&mut self, store: &ParamStore) {
        let flat = store.flat();
        self.count += 1;
        if self.count == 1 {
            self.mean = flat;
            return;
        }
        let c = self.count as f64;
        for (m, x) in self.mean.iter_mut().zip(flat) {
            *m += (x - *m) / c;
        }
    }

    /// Averaged parameters in registry order.
    pub fn averaged(&self) -> Result<&[f64]> {
        if self.count == 0 {
            return Err(Error::SwaEmpty);
        }
        Ok(&self.mean)
    }

    /// Copy of `store` holding the averaged parameters.
    pub fn finalize(&self, store: &ParamStore) -> Result<ParamStore> {
        let mut out = store.clone();
        out.set_flat(self.averaged()?);
        Ok(out)
    }
}

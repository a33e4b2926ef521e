use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cosine annealing with warm restarts. Cycle `i` lasts
/// `period * multiplier^i` epochs and anneals from `base * decay^i` to
/// `min_lr`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Sgdr {
    pub period: usize,
    pub multiplier: usize,
    pub decay: f64,
    pub min_lr: f64,
}

impl Default for Sgdr {
    fn default() -> Self {
        Sgdr {
            period: 10,
            multiplier: 2,
            decay: 0.1,
            min_lr: 0.0,
        }
    }
}

impl Sgdr {
    pub fn validate(&self) -> Result<()> {
        if self.period == 0 || self.multiplier == 0 {
            return Err(Error::Config("SGDR period and multiplier must be positive".into()));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!("SGDR decay {} outside (0, 1]", self.decay)));
        }
        if !(self.min_lr >= 0.0) {
            return Err(Error::Config("SGDR floor must be non-negative".into()));
        }
        Ok(())
    }

    /// Learning rate for `epoch` (0-based).
    pub fn lr(&self, base_lr: f64, epoch: usize) -> f64 {
        let (mut start, mut len, mut peak) = (0, self.period, base_lr);
        while epoch >= start + len {
            start += len;
            len *= self.multiplier;
            peak *= self.decay;
        }
        let t = (epoch - start) as f64 / len as f64;
        self.min_lr + (peak - self.min_lr) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cycle_boundaries() {
        let s = Sgdr::default();
        assert_eq!(s.lr(5e-4, 0), 5e-4);
        assert!((s.lr(1.0, 5) - 0.5).abs() < 1e-15);
        assert!((s.lr(5e-4, 10) - 5e-5).abs() < 1e-18);
        // The second cycle is 20 epochs long; the third starts at 30.
        assert!((s.lr(1.0, 20) - 0.05).abs() < 1e-15);
        assert!((s.lr(1.0, 30) - 0.01).abs() < 1e-15);
    }
}

use std::collections::BTreeMap;

use fretsense_core::model::{ModuleId, FORCE_MAX};
use thiserror::Error;

pub const DEFAULT_THRESHOLD_N: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("threshold {0} N outside (0, 25]")]
pub struct ThresholdError(pub f64);

fn check(v: f64) -> Result<f64, ThresholdError> {
    if v.is_finite() && v > 0.0 && v <= FORCE_MAX {
        Ok(v)
    } else {
        Err(ThresholdError(v))
    }
}

/// Over-force limits: one global value with optional per-module overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdConfig {
    global: f64,
    overrides: BTreeMap<ModuleId, f64>,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        ThresholdConfig {
            global: DEFAULT_THRESHOLD_N,
            overrides: BTreeMap::new(),
        }
    }
}

impl ThresholdConfig {
    pub fn new(global: f64) -> Result<Self, ThresholdError> {
        Ok(ThresholdConfig {
            global: check(global)?,
            overrides: BTreeMap::new(),
        })
    }

    pub fn global(&self) -> f64 {
        self.global
    }

    pub fn set_global(&mut self, v: f64) -> Result<(), ThresholdError> {
        self.global = check(v)?;
        Ok(())
    }

    pub fn set_module(&mut self, module: ModuleId, v: f64) -> Result<(), ThresholdError> {
        self.overrides.insert(module, check(v)?);
        Ok(())
    }

    pub fn clear_module(&mut self, module: ModuleId) {
        self.overrides.remove(&module);
    }

    pub fn threshold(&self, module: ModuleId) -> f64 {
        self.overrides.get(&module).copied().unwrap_or(self.global)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_take_precedence() {
        let mut t = ThresholdConfig::default();
        assert_eq!(t.global(), 8.0);
        let m = ModuleId::new(2, 3).unwrap();
        t.set_module(m, 5.0).unwrap();
        assert_eq!(t.threshold(m), 5.0);
        assert_eq!(t.threshold(ModuleId::new(2, 4).unwrap()), 8.0);
        t.clear_module(m);
        assert_eq!(t.threshold(m), 8.0);
    }

    #[test]
    fn range_is_half_open() {
        assert!(ThresholdConfig::new(0.0).is_err());
        assert!(ThresholdConfig::new(25.0).is_ok());
        assert!(ThresholdConfig::new(25.01).is_err());
        assert!(ThresholdConfig::new(f64::NAN).is_err());
        let mut t = ThresholdConfig::default();
        assert_eq!(t.set_global(-1.0), Err(ThresholdError(-1.0)));
        assert_eq!(t.global(), 8.0);
    }
}

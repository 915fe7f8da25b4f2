//! Constant-power battery lifetime model.
//!
//! Battery energy is taken at nominal voltage with no discharge derating,
//! and the budget is treated as battery-side draw.

use std::fmt;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerBudget {
    pub acquisition_mw: f64,
    pub radio_mw: f64,
    pub other_mw: f64,
    pub battery_mah: f64,
    pub battery_v: f64,
}

impl Default for PowerBudget {
    /// Sensing front end, radio, and a 240 mAh cell at 3.7 V.
    fn default() -> Self {
        Self {
            acquisition_mw: 0.848,
            radio_mw: 1.672,
            other_mw: 0.0,
            battery_mah: 240.0,
            battery_v: 3.7,
        }
    }
}

impl PowerBudget {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("acquisition_mw", self.acquisition_mw),
            ("radio_mw", self.radio_mw),
            ("other_mw", self.other_mw),
            ("battery_mah", self.battery_mah),
            ("battery_v", self.battery_v),
        ];
        for (name, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }

    pub fn total_mw(&self) -> f64 {
        self.acquisition_mw + self.radio_mw + self.other_mw
    }

    pub fn battery_mwh(&self) -> f64 {
        self.battery_mah * self.battery_v
    }

    pub fn lifetime_hours(&self) -> Result<f64> {
        self.validate()?;
        let total = self.total_mw();
        if total <= 0.0 {
            return Err(Error::invalid("total power must be positive"));
        }
        Ok(self.battery_mwh() / total)
    }
}

impl fmt::Display for PowerBudget {
    /// One-line report; prints `lifetime n/a` when the budget is invalid.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "total {:.3} mW (acquisition {:.3} + radio {:.3} + other {:.3}), battery {:.0} mWh ({} mAh @ {} V), ",
            self.total_mw(),
            self.acquisition_mw,
            self.radio_mw,
            self.other_mw,
            self.battery_mwh(),
            self.battery_mah,
            self.battery_v
        )?;
        match self.lifetime_hours() {
            Ok(h) => write!(f, "lifetime {h:.1} h"),
            Err(_) => write!(f, "lifetime n/a"),
        }
    }
}

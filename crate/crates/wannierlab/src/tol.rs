use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Numerical thresholds. Names match the `--tol name=value` CLI keys.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tolerances {
    pub herm: f64,
    pub cs: f64,
    pub gap: f64,
    pub proj: f64,
    pub pd: f64,
    pub comm: f64,
    /// Constant C in the transport tolerance C·Δ².
    pub transport_c: f64,
    pub degen: f64,
    pub matching: f64,
    pub log: f64,
    pub frame: f64,
    pub frame2: f64,
    pub wannier: f64,
    pub mag_alg: f64,
    pub mag_trunc: f64,
    pub circle_bins: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            herm: 1e-10,
            cs: 1e-10,
            gap: 1e-6,
            proj: 1e-10,
            pd: 1e-12,
            comm: 1e-10,
            transport_c: 1e3,
            degen: 1e-6,
            matching: 0.2,
            log: 1e-8,
            frame: 1e-6,
            frame2: 1e-5,
            wannier: 1e-6,
            mag_alg: 1e-8,
            mag_trunc: 1e-6,
            circle_bins: 64.0,
        }
    }
}

impl Tolerances {
    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::Input(format!("tolerance {name} must be positive, got {value}")));
        }
        let slot = match name {
            "herm" => &mut self.herm,
            "cs" => &mut self.cs,
            "gap" => &mut self.gap,
            "proj" => &mut self.proj,
            "pd" => &mut self.pd,
            "comm" => &mut self.comm,
            "transport_c" => &mut self.transport_c,
            "degen" => &mut self.degen,
            "matching" => &mut self.matching,
            "log" => &mut self.log,
            "frame" => &mut self.frame,
            "frame2" => &mut self.frame2,
            "wannier" => &mut self.wannier,
            "mag_alg" => &mut self.mag_alg,
            "mag_trunc" => &mut self.mag_trunc,
            "circle_bins" => &mut self.circle_bins,
            _ => return Err(Error::Input(format!("unknown tolerance {name}"))),
        };
        *slot = value;
        Ok(())
    }

    pub fn transport(&self, step: f64) -> f64 {
        self.transport_c * step * step
    }
}

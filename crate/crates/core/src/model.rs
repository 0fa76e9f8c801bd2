//! Shared domain types and unit conversions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Center wavelength of the degenerate pairs, in nm.
pub const CENTER_WAVELENGTH_NM: f64 = 1554.0;

/// One detection event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TimeTag {
    pub ticks: u64,
    pub channel: u8,
}

impl TimeTag {
    pub fn new(ticks: u64, channel: u8) -> Self {
        Self { ticks, channel }
    }
}

/// Returns the index of the first out-of-order tag, if any.
pub fn first_unsorted(tags: &[TimeTag]) -> Option<usize> {
    tags.windows(2)
        .position(|w| w[1].ticks < w[0].ticks)
        .map(|i| i + 1)
}

pub(crate) fn ensure_sorted(tags: &[TimeTag], stream: &'static str) -> Result<()> {
    match first_unsorted(tags) {
        Some(index) => Err(Error::Unsorted { stream, index }),
        None => Ok(()),
    }
}

pub(crate) fn ensure_sorted_ticks(ticks: &[u64], stream: &'static str) -> Result<()> {
    match ticks.windows(2).position(|w| w[1] < w[0]).map(|i| i + 1) {
        Some(index) => Err(Error::Unsorted { stream, index }),
        None => Ok(()),
    }
}

/// Time base of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Units {
    /// Picoseconds per tagger tick.
    pub tick_resolution_ps: f64,
    /// Pump pulse separation in ps.
    pub bin_period_ps: f64,
    /// Interferometer arm delay in ps; must match `bin_period_ps`.
    pub mzi_delay_ps: f64,
}

impl Default for Units {
    fn default() -> Self {
        Self {
            tick_resolution_ps: 1.0,
            bin_period_ps: 1000.0,
            mzi_delay_ps: 1000.0,
        }
    }
}

impl Units {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if !(self.tick_resolution_ps > 0.0) {
            return Err(Error::config(
                format!("{prefix}.tick_resolution_ps"),
                "must be > 0",
            ));
        }
        if !(self.bin_period_ps > 0.0) {
            return Err(Error::config(format!("{prefix}.bin_period_ps"), "must be > 0"));
        }
        if (self.mzi_delay_ps - self.bin_period_ps).abs() > 1e-9 * self.bin_period_ps {
            return Err(Error::config(
                format!("{prefix}.mzi_delay_ps"),
                format!(
                    "interferometer delay {} ps must equal the bin period {} ps",
                    self.mzi_delay_ps, self.bin_period_ps
                ),
            ));
        }
        Ok(())
    }

    pub fn ps_to_ticks(&self, ps: f64) -> u64 {
        (ps / self.tick_resolution_ps).round().max(0.0) as u64
    }

    pub fn ticks_to_ps(&self, ticks: u64) -> f64 {
        ticks as f64 * self.tick_resolution_ps
    }

    pub fn repetition_rate_hz(&self) -> f64 {
        1e12 / self.bin_period_ps
    }
}

/// Linear survival probability of a loss in dB.
pub fn db_to_survival(loss_db: f64) -> f64 {
    10f64.powf(-loss_db / 10.0)
}

/// Loss in dB of a linear survival probability.
pub fn survival_to_db(survival: f64) -> f64 {
    -10.0 * survival.log10()
}

/// Mean pairs per pulse for a pump power.
///
/// `calibration` scales the measured brightness, e.g. to account for
/// coupling losses that the brightness figure may or may not include.
pub fn mu_from_power(
    power_mw: f64,
    rep_rate_hz: f64,
    brightness_hz_per_mw: f64,
    calibration: f64,
) -> Result<f64> {
    for (name, v) in [
        ("power_mW", power_mw),
        ("rep_rate_Hz", rep_rate_hz),
        ("brightness_Hz_per_mW", brightness_hz_per_mw),
    ] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::arg(format!("{name} must be > 0, got {v}")));
        }
    }
    if !(calibration > 0.0 && calibration <= 1.0) {
        return Err(Error::arg(format!(
            "calibration must lie in (0, 1], got {calibration}"
        )));
    }
    Ok(calibration * brightness_hz_per_mw * power_mw / rep_rate_hz)
}

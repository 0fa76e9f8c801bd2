use serde::Serialize;

use super::histogram::build_delay_histogram;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rate {
    pub counts: u64,
    pub rate_hz: f64,
    pub sigma_hz: f64,
}

impl Rate {
    fn new(counts: u64, duration_s: f64) -> Self {
        Self {
            counts,
            rate_hz: counts as f64 / duration_s,
            sigma_hz: (counts as f64).sqrt() / duration_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub duration_s: f64,
    pub singles: Vec<Rate>,
    /// Pairs between the first two channels inside the peak windows.
    pub coincidences: Rate,
    /// Mean accidentals per window, expressed as a rate.
    pub accidentals: Rate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateWindows {
    pub window_ps: f64,
    pub peak_offsets_ps: Vec<f64>,
    pub accidental_offsets_ps: Vec<f64>,
}

/// Singles of every channel, and coincidences and accidentals between
/// channels 0 and 1.
pub fn rate_report(
    streams: &[&[u64]],
    tick_resolution_ps: f64,
    duration_s: f64,
    windows: &RateWindows,
) -> Result<RateReport> {
    if !(duration_s > 0.0) {
        return Err(Error::arg("rate report needs a positive duration"));
    }
    let singles = streams
        .iter()
        .map(|s| Rate::new(s.len() as u64, duration_s))
        .collect();
    let (mut coinc, mut acc_mean) = (0u64, 0.0);
    if streams.len() >= 2 {
        let reach = windows
            .peak_offsets_ps
            .iter()
            .chain(&windows.accidental_offsets_ps)
            .fold(0.0f64, |m, o| m.max(o.abs()))
            + windows.window_ps;
        let bin = tick_resolution_ps.max(1.0);
        let hist = build_delay_histogram(streams[0], streams[1], tick_resolution_ps, bin, reach)?;
        coinc = windows
            .peak_offsets_ps
            .iter()
            .map(|&o| hist.window_count(o, windows.window_ps))
            .sum();
        let n = windows.accidental_offsets_ps.len();
        if n > 0 {
            acc_mean = windows
                .accidental_offsets_ps
                .iter()
                .map(|&o| hist.window_count(o, windows.window_ps) as f64)
                .sum::<f64>()
                / n as f64;
        }
    }
    let n_acc = windows.accidental_offsets_ps.len().max(1) as f64;
    Ok(RateReport {
        duration_s,
        singles,
        coincidences: Rate::new(coinc, duration_s),
        accidentals: Rate {
            counts: acc_mean.round() as u64,
            rate_hz: acc_mean / duration_s,
            sigma_hz: (acc_mean / n_acc).sqrt() / duration_s,
        },
    })
}

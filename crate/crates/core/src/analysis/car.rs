use serde::Serialize;

use super::histogram::DelayHistogram;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CarResult {
    pub window_ps: f64,
    pub peak_counts: u64,
    pub accidental_mean: f64,
    /// `f64::INFINITY` when no accidental was observed.
    pub car: f64,
    /// With zero accidentals: the CAR had one accidental count been seen.
    pub lower_bound: Option<f64>,
}

impl CarResult {
    pub fn is_finite(&self) -> bool {
        self.car.is_finite()
    }
}

/// Coincidence-to-accidental ratio: counts in the window at `peak_delay_ps`
/// over the mean of equal windows at the accidental offsets.
pub fn compute_car(
    hist: &DelayHistogram,
    window_ps: f64,
    peak_delay_ps: f64,
    accidental_offsets_ps: &[f64],
) -> CarResult {
    let peak_counts = hist.window_count(peak_delay_ps, window_ps);
    let n = accidental_offsets_ps.len().max(1) as f64;
    let acc: u64 = accidental_offsets_ps
        .iter()
        .map(|&o| hist.window_count(o, window_ps))
        .sum();
    let accidental_mean = acc as f64 / n;
    let (car, lower_bound) = if acc == 0 {
        (f64::INFINITY, Some(peak_counts as f64 * n))
    } else {
        (peak_counts as f64 / accidental_mean, None)
    };
    CarResult {
        window_ps,
        peak_counts,
        accidental_mean,
        car,
        lower_bound,
    }
}

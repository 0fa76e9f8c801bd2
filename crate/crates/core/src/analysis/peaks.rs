use serde::Serialize;

use super::histogram::DelayHistogram;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PeakMetrics {
    pub position_ps: f64,
    pub area_in_window: u64,
    pub fwhm_ps: f64,
    pub max_count: u64,
}

/// Full width at half maximum of a sampled profile, interpolating linearly
/// on both flanks. Returns `None` for an empty or all-zero profile.
pub fn profile_fwhm(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len().min(ys.len());
    if n == 0 {
        return None;
    }
    let (imax, &ymax) = ys[..n]
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))?;
    if !(ymax > 0.0) {
        return None;
    }
    let half = ymax / 2.0;
    let cross = |i: usize, j: usize| {
        // y[i] >= half > y[j]
        let t = (ys[i] - half) / (ys[i] - ys[j]);
        xs[i] + t * (xs[j] - xs[i])
    };
    let mut left = xs[0];
    let mut i = imax;
    while i > 0 {
        if ys[i - 1] < half {
            left = cross(i, i - 1);
            break;
        }
        i -= 1;
    }
    if i == 0 {
        // profile never drops below half on this side: extrapolate one half step
        left = xs[0] - if n > 1 { (xs[1] - xs[0]) / 2.0 } else { 0.0 };
    }
    let mut right = xs[n - 1];
    let mut j = imax;
    while j + 1 < n {
        if ys[j + 1] < half {
            right = cross(j, j + 1);
            break;
        }
        j += 1;
    }
    if j + 1 == n {
        right = xs[n - 1] + if n > 1 { (xs[n - 1] - xs[n - 2]) / 2.0 } else { 0.0 };
    }
    Some(right - left)
}

/// Centroid, window area and FWHM of the peak near `center_guess_ps`.
pub fn peak_metrics(
    hist: &DelayHistogram,
    center_guess_ps: f64,
    search_radius_ps: f64,
    window_ps: f64,
) -> Option<PeakMetrics> {
    let idx: Vec<usize> = (0..hist.counts.len())
        .filter(|&i| (hist.delay(i) - center_guess_ps).abs() <= search_radius_ps)
        .collect();
    let total: u64 = idx.iter().map(|&i| hist.counts[i]).sum();
    if total == 0 {
        return None;
    }
    let position_ps = idx
        .iter()
        .map(|&i| hist.delay(i) * hist.counts[i] as f64)
        .sum::<f64>()
        / total as f64;
    let xs: Vec<f64> = idx.iter().map(|&i| hist.delay(i)).collect();
    let ys: Vec<f64> = idx.iter().map(|&i| hist.counts[i] as f64).collect();
    Some(PeakMetrics {
        position_ps,
        area_in_window: hist.window_count(position_ps, window_ps),
        fwhm_ps: profile_fwhm(&xs, &ys)?,
        max_count: idx.iter().map(|&i| hist.counts[i]).max().unwrap_or(0),
    })
}

//! Measurements built from simulated runs: single-run analysis, phase
//! sweeps with fringe fits, and power sweeps with CAR.

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use std::io::Write;

use crate::analysis::rates::RateWindows;
use crate::analysis::{
    build_delay_histogram, compute_car, fit_cosine, peak_metrics, rate_report,
    visibility_corrected, CarResult, DelayHistogram, FringeFit, PeakMetrics, RateReport,
};
use crate::config::{AnalysisSettings, Scenario};
use crate::error::{Error, Result};
use crate::model::mu_from_power;
use crate::pipeline::{for_each_segment, PipelineStats};
use crate::rng::derive_seed;

/// On-grid windows at least two periods away that fit inside the histogram.
/// They hold the accidentals between pairs from different pulses, which
/// share the pulse comb.
pub fn comb_offsets(bin_period_ps: f64, window_ps: f64, max_delay_ps: f64) -> Vec<f64> {
    let kmax = ((max_delay_ps - window_ps / 2.0) / bin_period_ps).floor() as i64;
    (2..=kmax)
        .flat_map(|k| [-k, k])
        .map(|k| k as f64 * bin_period_ps)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunAnalysis {
    #[serde(skip)]
    pub histogram: DelayHistogram,
    pub duration_s: f64,
    pub center: u64,
    pub side_minus: u64,
    pub side_plus: u64,
    /// Mean counts per window at the off-grid accidental offsets.
    pub accidental_mean: f64,
    /// Center peak against the comb accidentals.
    pub car: CarResult,
    pub center_peak: Option<PeakMetrics>,
    pub rates: RateReport,
}

impl RunAnalysis {
    pub fn side_mean(&self) -> f64 {
        0.5 * (self.side_minus + self.side_plus) as f64
    }
}

/// Accumulates histograms and singles of a single-receiver run.
pub struct RunAccumulator {
    settings: AnalysisSettings,
    bin_period_ps: f64,
    tick_resolution_ps: f64,
    histogram: DelayHistogram,
    singles: [u64; 2],
    duration_s: f64,
    pub stats: PipelineStats,
}

impl RunAccumulator {
    pub fn new(settings: &AnalysisSettings, bin_period_ps: f64, tick_resolution_ps: f64) -> Self {
        Self {
            settings: settings.clone(),
            bin_period_ps,
            tick_resolution_ps,
            histogram: DelayHistogram::empty(settings.bin_width_ps, settings.max_delay_ps),
            singles: [0; 2],
            duration_s: 0.0,
            stats: PipelineStats::default(),
        }
    }

    pub fn add(&mut self, a: &[u64], b: &[u64], duration_s: f64) -> Result<()> {
        let h = build_delay_histogram(
            a,
            b,
            self.tick_resolution_ps,
            self.settings.bin_width_ps,
            self.settings.max_delay_ps,
        )?;
        self.histogram.accumulate(&h)?;
        self.singles[0] += a.len() as u64;
        self.singles[1] += b.len() as u64;
        self.duration_s += duration_s;
        Ok(())
    }

    pub fn finish(self) -> Result<RunAnalysis> {
        let s = &self.settings;
        let h = self.histogram;
        let t = self.bin_period_ps;
        let w = s.window_ps;
        let acc = &s.accidental_offsets_ps;
        let accidental_mean = if acc.is_empty() {
            0.0
        } else {
            acc.iter().map(|&o| h.window_count(o, w) as f64).sum::<f64>() / acc.len() as f64
        };
        let comb = comb_offsets(t, w, s.max_delay_ps);
        let center = h.window_count(0.0, w);
        let (side_minus, side_plus) = (h.window_count(-t, w), h.window_count(t, w));
        let duration = self.duration_s;
        if !(duration > 0.0) {
            return Err(Error::arg("run has zero duration"));
        }
        let rate = |c: u64| crate::analysis::rates::Rate {
            counts: c,
            rate_hz: c as f64 / duration,
            sigma_hz: (c as f64).sqrt() / duration,
        };
        let rates = RateReport {
            duration_s: duration,
            singles: vec![rate(self.singles[0]), rate(self.singles[1])],
            coincidences: rate(center + side_minus + side_plus),
            accidentals: crate::analysis::rates::Rate {
                counts: accidental_mean.round() as u64,
                rate_hz: accidental_mean / duration,
                sigma_hz: (accidental_mean / acc.len().max(1) as f64).sqrt() / duration,
            },
        };
        Ok(RunAnalysis {
            car: compute_car(&h, w, 0.0, &comb),
            center_peak: peak_metrics(&h, 0.0, t / 2.0, w),
            duration_s: duration,
            center,
            side_minus,
            side_plus,
            accidental_mean,
            rates,
            histogram: h,
        })
    }
}

/// Analyzes two tag streams of a single receiver.
pub fn analyze_streams(
    a: &[u64],
    b: &[u64],
    duration_s: f64,
    tick_resolution_ps: f64,
    bin_period_ps: f64,
    settings: &AnalysisSettings,
) -> Result<RunAnalysis> {
    let mut acc = RunAccumulator::new(settings, bin_period_ps, tick_resolution_ps);
    acc.add(a, b, duration_s)?;
    acc.finish()
}

/// Simulates a single-receiver scenario segment by segment and analyzes it.
pub fn run_and_analyze(scenario: &Scenario) -> Result<RunAnalysis> {
    let u = &scenario.run.units;
    let mut acc = RunAccumulator::new(&scenario.analysis, u.bin_period_ps, u.tick_resolution_ps);
    for_each_segment(scenario, scenario.run.pulse_count, |out| {
        acc.stats.add(&out.stats);
        acc.add(&out.ticks(0), &out.ticks(1), out.duration_s())
    })?;
    acc.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FringePoint {
    pub heater_mw: Option<f64>,
    pub phase_rad: f64,
    pub center_counts: u64,
    /// Mean of the two side peaks.
    pub side_counts: f64,
    pub side_minus: u64,
    pub side_plus: u64,
    pub accidental_mean: f64,
    pub peak_fwhm_ps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FringeReport {
    pub scenario: String,
    pub seed: u64,
    pub points: Vec<FringePoint>,
    pub fit: Option<FringeFit>,
    pub fit_error: Option<String>,
    pub raw_visibility: Option<f64>,
    pub corrected_visibility: Option<f64>,
    pub accidentals_per_window: f64,
    /// χ² test of the side peaks against a constant.
    pub side_chi2: f64,
    pub side_p_value: f64,
}

impl FringeReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "heater_mW,phase_rad,center_counts,side_counts")?;
        for p in &self.points {
            let h = p.heater_mw.map(|h| h.to_string()).unwrap_or_default();
            writeln!(w, "{h},{},{},{}", p.phase_rad, p.center_counts, p.side_counts)?;
        }
        Ok(())
    }
}

/// Pearson χ² of counts against their mean, and its p-value.
pub fn constant_chi2(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n < 2 {
        return (0.0, 1.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if mean <= 0.0 {
        return (0.0, 1.0);
    }
    let chi2 = values.iter().map(|v| (v - mean).powi(2) / mean).sum::<f64>();
    let p = 1.0 - ChiSquared::new((n - 1) as f64).unwrap().cdf(chi2);
    (chi2, p)
}

/// One simulation per grid point, each with a seed derived from the master
/// seed and the point index.
pub fn sweep_phase(scenario: &Scenario, seed: u64) -> Result<FringeReport> {
    scenario.validate()?;
    let (phases, heater) = scenario.sweep_grid();
    let points = phases
        .par_iter()
        .enumerate()
        .map(|(i, &phase)| {
            let mut s = scenario.clone();
            s.run.mzi.phase_delta = phase;
            s.run.seed = derive_seed(seed, i as u64);
            s.run.pulse_count = scenario.sweep.point_pulses;
            let r = run_and_analyze(&s)?;
            Ok(FringePoint {
                heater_mw: heater.as_ref().map(|h| h[i]),
                phase_rad: phase,
                center_counts: r.center,
                side_counts: r.side_mean(),
                side_minus: r.side_minus,
                side_plus: r.side_plus,
                accidental_mean: r.accidental_mean,
                peak_fwhm_ps: r.center_peak.map(|p| p.fwhm_ps),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(fringe_report(scenario, seed, points))
}

/// Fits the center counts of a sweep and derives raw and corrected
/// visibility. A failed fit is reported, not raised.
pub fn fringe_report(scenario: &Scenario, seed: u64, points: Vec<FringePoint>) -> FringeReport {
    let x: Vec<f64> = points
        .iter()
        .map(|p| p.heater_mw.unwrap_or(p.phase_rad))
        .collect();
    let y: Vec<f64> = points.iter().map(|p| p.center_counts as f64).collect();
    let sigma: Vec<f64> = y.iter().map(|v| v.max(1.0).sqrt()).collect();
    let accidentals = if points.is_empty() {
        0.0
    } else {
        points.iter().map(|p| p.accidental_mean).sum::<f64>() / points.len() as f64
    };
    let freq = (!scenario.analysis.free_frequency).then(|| scenario.fringe_frequency());
    let (mut fit, mut fit_error) = (None, None);
    let (mut raw, mut corrected) = (None, None);
    match fit_cosine(&x, &y, &sigma, freq) {
        Ok(f) => {
            if f.is_valid() {
                raw = Some(f.visibility);
                let (cmax, cmin) = (f.offset + f.amplitude, (f.offset - f.amplitude).max(0.0));
                match visibility_corrected(cmax, cmin, accidentals) {
                    Ok(v) => corrected = Some(v),
                    Err(e) => fit_error = Some(e.to_string()),
                }
            } else {
                fit_error = Some(format!(
                    "fit not usable: converged={}, visibility={}",
                    f.converged, f.visibility
                ));
            }
            fit = Some(f);
        }
        Err(e) => fit_error = Some(e.to_string()),
    }
    let sides: Vec<f64> = points
        .iter()
        .flat_map(|p| [p.side_minus as f64, p.side_plus as f64])
        .collect();
    let (side_chi2, side_p_value) = constant_chi2(&sides);
    FringeReport {
        scenario: scenario.name.clone(),
        seed,
        points,
        fit,
        fit_error,
        raw_visibility: raw,
        corrected_visibility: corrected,
        accidentals_per_window: accidentals,
        side_chi2,
        side_p_value,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerPoint {
    pub power_mw: Option<f64>,
    pub mu: f64,
    pub singles_a_hz: f64,
    pub singles_b_hz: f64,
    pub coincidences_hz: f64,
    pub center_counts: u64,
    pub car: f64,
    pub car_lower_bound: Option<f64>,
    pub accidental_mean: f64,
}

impl PowerPoint {
    pub const CSV_HEADER: &'static str =
        "power_mW,mu,singles_a_hz,singles_b_hz,coincidences_hz,car";

    pub fn csv_row(&self) -> String {
        let p = self.power_mw.map(|p| p.to_string()).unwrap_or_default();
        format!(
            "{p},{},{},{},{},{}",
            self.mu, self.singles_a_hz, self.singles_b_hz, self.coincidences_hz, self.car
        )
    }
}

/// Runs the scenario at each mean pair number.
pub fn sweep_mu(scenario: &Scenario, mus: &[f64], seed: u64) -> Result<Vec<PowerPoint>> {
    mus.par_iter()
        .enumerate()
        .map(|(i, &mu)| {
            let mut s = scenario.clone();
            s.run.mu = mu;
            s.run.seed = derive_seed(seed, i as u64);
            s.validate()?;
            let r = run_and_analyze(&s)?;
            Ok(PowerPoint {
                power_mw: None,
                mu,
                singles_a_hz: r.rates.singles[0].rate_hz,
                singles_b_hz: r.rates.singles[1].rate_hz,
                coincidences_hz: r.rates.coincidences.rate_hz,
                center_counts: r.center,
                car: r.car.car,
                car_lower_bound: r.car.lower_bound,
                accidental_mean: r.car.accidental_mean,
            })
        })
        .collect()
}

/// Converts each pump power to μ and runs the scenario.
pub fn sweep_power(scenario: &Scenario, seed: u64) -> Result<Vec<PowerPoint>> {
    let sw = &scenario.sweep;
    let rep = scenario.run.units.repetition_rate_hz();
    let mus = sw
        .power_mw
        .iter()
        .map(|&p| mu_from_power(p, rep, sw.brightness_hz_per_mw, sw.calibration))
        .collect::<Result<Vec<_>>>()?;
    let mut pts = sweep_mu(scenario, &mus, seed)?;
    for (p, &power) in pts.iter_mut().zip(&sw.power_mw) {
        p.power_mw = Some(power);
    }
    Ok(pts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares line.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len().min(y.len());
    if n < 2 {
        return None;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let sxx: f64 = x[..n].iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x[..n].iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y[..n].iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(LinearFit {
        slope,
        intercept: my - slope * mx,
        r2,
    })
}

/// Slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    linear_fit(&lx, &ly).map(|f| f.slope)
}

/// Windows used by [`rate_report`] for a single-receiver histogram.
pub fn rate_windows(settings: &AnalysisSettings, bin_period_ps: f64) -> RateWindows {
    RateWindows {
        window_ps: settings.window_ps,
        peak_offsets_ps: vec![-bin_period_ps, 0.0, bin_period_ps],
        accidental_offsets_ps: settings.accidental_offsets_ps.clone(),
    }
}

/// Rate report straight from tag streams.
pub fn stream_rates(
    streams: &[&[u64]],
    tick_resolution_ps: f64,
    duration_s: f64,
    settings: &AnalysisSettings,
    bin_period_ps: f64,
) -> Result<RateReport> {
    rate_report(streams, tick_resolution_ps, duration_s, &rate_windows(settings, bin_period_ps))
}

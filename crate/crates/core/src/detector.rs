//! Single-photon detector model and the saturation curve.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::channel::inject_background;
use crate::error::{Error, Result};
use crate::model::TimeTag;
use crate::rng::rng_substream;
use crate::source::FWHM_PER_SIGMA;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub efficiency: f64,
    pub jitter_fwhm_ps: f64,
    pub dead_time_ns: f64,
    pub dark_rate_hz: f64,
    pub id: u8,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self::snspd(0)
    }
}

impl DetectorConfig {
    /// InGaAs avalanche diode as used for the source characterization.
    pub fn spad(id: u8) -> Self {
        Self {
            efficiency: 0.08,
            jitter_fwhm_ps: 150.0,
            dead_time_ns: 25_000.0,
            dark_rate_hz: 850.0,
            id,
        }
    }

    /// Superconducting nanowire detector. Jitter is the middle of 150-200 ps.
    pub fn snspd(id: u8) -> Self {
        Self {
            efficiency: 0.8,
            jitter_fwhm_ps: 175.0,
            dead_time_ns: 0.0,
            dark_rate_hz: 0.0,
            id,
        }
    }

    pub fn ideal(id: u8) -> Self {
        Self {
            efficiency: 1.0,
            jitter_fwhm_ps: 0.0,
            dead_time_ns: 0.0,
            dark_rate_hz: 0.0,
            id,
        }
    }

    pub fn preset(name: &str, id: u8) -> Option<Self> {
        match name {
            "spad" => Some(Self::spad(id)),
            "snspd" => Some(Self::snspd(id)),
            "ideal" => Some(Self::ideal(id)),
            _ => None,
        }
    }

    pub fn validate(&self, prefix: &str) -> Result<()> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(Error::config(
                format!("{prefix}.efficiency"),
                "must lie in [0, 1]",
            ));
        }
        for (key, v) in [
            ("jitter_fwhm_ps", self.jitter_fwhm_ps),
            ("dead_time_ns", self.dead_time_ns),
            ("dark_rate_hz", self.dark_rate_hz),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(format!("{prefix}.{key}"), "must be >= 0"));
            }
        }
        Ok(())
    }

    pub fn dead_time_ps(&self) -> f64 {
        self.dead_time_ns * 1e3
    }
}

fn to_ticks(t_ps: f64, tick_resolution_ps: f64) -> u64 {
    let t = (t_ps / tick_resolution_ps).round();
    if t <= 0.0 {
        0
    } else {
        t as u64
    }
}

/// Drops tags that fall inside the blockade of the last accepted tag.
pub fn apply_dead_time(ticks: &mut Vec<u64>, dead_ticks: u64) {
    if dead_ticks == 0 || ticks.is_empty() {
        return;
    }
    let mut last: Option<u64> = None;
    ticks.retain(|&t| match last {
        Some(l) if t - l < dead_ticks => false,
        _ => {
            last = Some(t);
            true
        }
    });
}

/// Turns sorted photon arrival times into the tag stream of one detector.
/// Dark counts are drawn over `span_ps`.
pub fn detect<R: Rng + ?Sized>(
    arrivals_ps: &[f64],
    span_ps: (f64, f64),
    cfg: &DetectorConfig,
    tick_resolution_ps: f64,
    rng: &mut R,
) -> Result<Vec<TimeTag>> {
    if let Some(i) = arrivals_ps.windows(2).position(|w| w[1] < w[0]) {
        return Err(Error::Unsorted {
            stream: "arrivals",
            index: i + 1,
        });
    }
    let mut times: Vec<f64> = arrivals_ps
        .iter()
        .copied()
        .filter(|_| cfg.efficiency >= 1.0 || rng.random::<f64>() < cfg.efficiency)
        .collect();
    times.extend(inject_background(span_ps.0, span_ps.1, cfg.dark_rate_hz, rng));
    let sigma = cfg.jitter_fwhm_ps / FWHM_PER_SIGMA;
    let mut ticks: Vec<u64> = if sigma > 0.0 {
        let n = Normal::new(0.0, sigma).expect("finite sigma");
        times
            .iter()
            .map(|&t| to_ticks(t + n.sample(rng), tick_resolution_ps))
            .collect()
    } else {
        times
            .iter()
            .map(|&t| to_ticks(t, tick_resolution_ps))
            .collect()
    };
    ticks.sort_unstable();
    let dead = (cfg.dead_time_ps() / tick_resolution_ps).round() as u64;
    apply_dead_time(&mut ticks, dead);
    Ok(ticks
        .into_iter()
        .map(|ticks| TimeTag {
            ticks,
            channel: cfg.id,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SaturationPoint {
    pub input_rate_hz: f64,
    pub linear_rate_hz: f64,
    pub observed_rate_hz: f64,
    /// Non-paralyzable prediction `r/(1 + r τ)`.
    pub model_rate_hz: f64,
}

impl SaturationPoint {
    pub fn deviation(&self) -> f64 {
        1.0 - self.observed_rate_hz / self.linear_rate_hz
    }
}

pub fn nonparalyzable_rate(rate_hz: f64, dead_time_s: f64) -> f64 {
    rate_hz / (1.0 + rate_hz * dead_time_s)
}

/// Simulates a detector under Poisson illumination at each input rate.
pub fn saturation_curve(
    input_rates_hz: &[f64],
    cfg: &DetectorConfig,
    duration_s: f64,
    seed: u64,
) -> Result<Vec<SaturationPoint>> {
    if !(duration_s > 0.0) {
        return Err(Error::arg("duration must be positive"));
    }
    let tau = cfg.dead_time_ns * 1e-9;
    let span = (0.0, duration_s * 1e12);
    input_rates_hz
        .iter()
        .enumerate()
        .map(|(i, &rate)| {
            let mut rng = rng_substream(seed, i as u64);
            let linear = cfg.efficiency * rate;
            // Thinning a Poisson stream is another Poisson stream, so the
            // efficiency is folded into the arrival rate.
            let arrivals = inject_background(span.0, span.1, linear, &mut rng);
            let unit = DetectorConfig {
                efficiency: 1.0,
                jitter_fwhm_ps: 0.0,
                dark_rate_hz: 0.0,
                ..*cfg
            };
            let tags = detect(&arrivals, span, &unit, 1.0, &mut rng)?;
            Ok(SaturationPoint {
                input_rate_hz: rate,
                linear_rate_hz: linear,
                observed_rate_hz: tags.len() as f64 / duration_s,
                model_rate_hz: nonparalyzable_rate(linear, tau),
            })
        })
        .collect()
}

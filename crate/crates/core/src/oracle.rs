//! Exact amplitude enumeration for short pulse trains.
//!
//! Each of `n` pulses holds the pair with equal weight and pump phase `φ_j`.
//! Every photon takes the short arm (amplitude 1/√2) or the long arm
//! (amplitude e^{iδ}/√2, one bin later) and is then routed by a balanced
//! splitter to detector A or B (amplitude 1/√2 each). Amplitudes that end in
//! the same output bins and detectors are summed coherently. A center cell
//! fed by two pulses is normalized by its number of contributions, so each
//! output cell carries the single-origin weight of one pulse modulated by the
//! interference term; the table therefore sums to at most one.

use std::collections::BTreeMap;
use std::io::Write;

use num_complex::Complex64;
use rand::Rng;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::optics::{center_acceptance, sample_path, OutcomeKind};

pub const MAX_ORACLE_PULSES: usize = 20;

/// Output cell: (signal bin, idler bin, signal detector, idler detector).
/// Detector 0 is A, 1 is B.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Cell {
    pub signal_bin: u32,
    pub idler_bin: u32,
    pub signal_det: u8,
    pub idler_det: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellAmplitude {
    #[serde(skip)]
    pub amplitude: Complex64,
    pub contributions: u32,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AmplitudeTable {
    pub pulse_count: usize,
    pub entries: BTreeMap<Cell, CellAmplitude>,
}

impl AmplitudeTable {
    pub fn total_probability(&self) -> f64 {
        self.entries.values().map(|e| e.probability).sum()
    }

    pub fn probability(&self, cell: &Cell) -> f64 {
        self.entries.get(cell).map_or(0.0, |e| e.probability)
    }

    /// Probability summed over detector assignments for given bins.
    pub fn bin_probability(&self, signal_bin: u32, idler_bin: u32) -> f64 {
        self.entries
            .iter()
            .filter(|(c, _)| c.signal_bin == signal_bin && c.idler_bin == idler_bin)
            .map(|(_, e)| e.probability)
            .sum()
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "signal_bin,idler_bin,detA,detB,probability")?;
        for (c, e) in &self.entries {
            // detA / detB: which photon landed on each detector (s = signal, i = idler)
            let (a, b) = match (c.signal_det, c.idler_det) {
                (0, 1) => ("s", "i"),
                (1, 0) => ("i", "s"),
                (0, 0) => ("si", "-"),
                _ => ("-", "si"),
            };
            writeln!(
                w,
                "{},{},{},{},{:.12e}",
                c.signal_bin, c.idler_bin, a, b, e.probability
            )?;
        }
        Ok(())
    }
}

/// Builds the post-selected output table for `n_pulses` pulses.
/// `pump_phases` must have one entry per pulse. With `include_boundary`
/// false, cells touching the first or last output bin are dropped.
pub fn amplitude_oracle(
    n_pulses: usize,
    delta: f64,
    pump_phases: &[f64],
    include_boundary: bool,
) -> Result<AmplitudeTable> {
    if n_pulses == 0 {
        return Err(Error::arg("n_pulses must be >= 1"));
    }
    if n_pulses > MAX_ORACLE_PULSES {
        return Err(Error::Resource(format!(
            "exact enumeration is limited to {MAX_ORACLE_PULSES} pulses, got {n_pulses}"
        )));
    }
    if pump_phases.len() != n_pulses {
        return Err(Error::arg(format!(
            "expected {n_pulses} pump phases, got {}",
            pump_phases.len()
        )));
    }
    let pulse_amp = 1.0 / (n_pulses as f64).sqrt();
    let arm = |long: bool| {
        if long {
            Complex64::from_polar(std::f64::consts::FRAC_1_SQRT_2, delta)
        } else {
            Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0)
        }
    };
    let route = std::f64::consts::FRAC_1_SQRT_2;

    let mut acc: BTreeMap<Cell, (Complex64, u32)> = BTreeMap::new();
    for (j, &phi) in pump_phases.iter().enumerate() {
        let c_j = Complex64::from_polar(pulse_amp, phi);
        for s_long in [false, true] {
            for i_long in [false, true] {
                for sd in 0..2u8 {
                    for id in 0..2u8 {
                        let a = c_j * arm(s_long) * arm(i_long) * route * route;
                        let cell = Cell {
                            signal_bin: j as u32 + s_long as u32,
                            idler_bin: j as u32 + i_long as u32,
                            signal_det: sd,
                            idler_det: id,
                        };
                        let e = acc.entry(cell).or_insert((Complex64::new(0.0, 0.0), 0));
                        e.0 += a;
                        e.1 += 1;
                    }
                }
            }
        }
    }
    let last_bin = n_pulses as u32;
    let entries = acc
        .into_iter()
        .filter(|(c, _)| {
            include_boundary || !(c.signal_bin == 0 || c.idler_bin == 0 || c.signal_bin == last_bin || c.idler_bin == last_bin)
        })
        .map(|(c, (amp, m))| {
            let probability = amp.norm_sqr() / m as f64;
            (
                c,
                CellAmplitude {
                    amplitude: amp,
                    contributions: m,
                    probability,
                },
            )
        })
        .collect();
    Ok(AmplitudeTable {
        pulse_count: n_pulses,
        entries,
    })
}

/// Monte Carlo counterpart of [`amplitude_oracle`]: one pair per draw, origin
/// pulse uniform, arms sampled by the per-pair accept/reject rule (boundary
/// bins have no interfering partner and are always accepted), detectors by a
/// balanced splitter. Returns `None` for a discarded pair.
pub fn sample_train_outcome<R: Rng + ?Sized>(
    n_pulses: usize,
    delta: f64,
    pump_phases: &[f64],
    visibility: f64,
    rng: &mut R,
) -> Option<Cell> {
    let j = rng.random_range(0..n_pulses) as u64;
    let last = n_pulses as u64;
    let outcome = sample_path(j, rng, |bin| {
        if bin == 0 || bin == last {
            1.0
        } else {
            let k = bin as usize;
            center_acceptance(visibility, 2.0 * delta + pump_phases[k - 1] - pump_phases[k])
        }
    });
    if outcome.kind == OutcomeKind::Discarded {
        return None;
    }
    Some(Cell {
        signal_bin: outcome.signal_bin as u32,
        idler_bin: outcome.idler_bin as u32,
        signal_det: rng.random::<bool>() as u8,
        idler_det: rng.random::<bool>() as u8,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleComparison {
    pub n_pulses: usize,
    pub delta: f64,
    pub samples: u64,
    pub chi2: f64,
    pub dof: usize,
    pub p_value: f64,
    /// Interior center-cell probability over one interior side-cell
    /// probability (both summed over detectors), from the oracle.
    pub oracle_center_side_ratio: Option<f64>,
    /// Boundary center cell over its side cell.
    pub oracle_boundary_ratio: f64,
    pub mc_center_side_ratio: Option<f64>,
}

impl OracleComparison {
    pub fn passed(&self, alpha: f64) -> bool {
        self.p_value > alpha
    }
}

/// Pearson χ² of Monte Carlo frequencies against the oracle, including the
/// discarded bucket. Cells with expected count below 5 are pooled.
pub fn compare_with_oracle<R: Rng + ?Sized>(
    n_pulses: usize,
    delta: f64,
    pump_phases: &[f64],
    samples: u64,
    rng: &mut R,
) -> Result<OracleComparison> {
    let table = amplitude_oracle(n_pulses, delta, pump_phases, true)?;
    let mut observed: BTreeMap<Cell, u64> = BTreeMap::new();
    let mut discarded = 0u64;
    for _ in 0..samples {
        match sample_train_outcome(n_pulses, delta, pump_phases, 1.0, rng) {
            Some(c) => *observed.entry(c).or_default() += 1,
            None => discarded += 1,
        }
    }
    let bins_total = |s: u32, i: u32| -> u64 {
        observed
            .iter()
            .filter(|(c, _)| c.signal_bin == s && c.idler_bin == i)
            .map(|(_, &k)| k)
            .sum()
    };
    let mc_ratio = (n_pulses >= 2).then(|| bins_total(1, 1) as f64 / bins_total(1, 2) as f64);
    let n = samples as f64;
    let mut chi2 = 0.0;
    let mut bins = 0usize;
    let mut pooled_exp = 0.0;
    let mut pooled_obs = 0.0;
    let mut add = |exp: f64, obs: f64, chi2: &mut f64, bins: &mut usize| {
        if exp >= 5.0 {
            *chi2 += (obs - exp).powi(2) / exp;
            *bins += 1;
        } else {
            pooled_exp += exp;
            pooled_obs += obs;
        }
    };
    for (cell, e) in &table.entries {
        let obs = observed.remove(cell).unwrap_or(0) as f64;
        add(e.probability * n, obs, &mut chi2, &mut bins);
    }
    // Outcomes the oracle says are impossible.
    let stray: u64 = observed.values().sum();
    let p_discard = (1.0 - table.total_probability()).max(0.0);
    add(p_discard * n, discarded as f64, &mut chi2, &mut bins);
    if pooled_exp > 0.0 || pooled_obs > 0.0 || stray > 0 {
        let obs = pooled_obs + stray as f64;
        let exp = pooled_exp.max(1e-12);
        chi2 += (obs - exp).powi(2) / exp;
        bins += 1;
    }
    let dof = bins.saturating_sub(1).max(1);
    let p_value = 1.0 - ChiSquared::new(dof as f64).unwrap().cdf(chi2);

    let oracle_ratio =
        (n_pulses >= 2).then(|| table.bin_probability(1, 1) / table.bin_probability(1, 2));
    let boundary = table.bin_probability(0, 0) / table.bin_probability(0, 1);
    Ok(OracleComparison {
        n_pulses,
        delta,
        samples,
        chi2,
        dof,
        p_value,
        oracle_center_side_ratio: oracle_ratio,
        oracle_boundary_ratio: boundary,
        mc_center_side_ratio: mc_ratio,
    })
}

//! Unbalanced Mach-Zehnder delay line and analysis beamsplitter.
//!
//! A pair entering the interferometer either splits across the two arms
//! (side peaks, one bin apart) or takes the same arm (center peak). Same-arm
//! pairs interfere with the same-arm amplitude of the neighboring pulse, which
//! is sampled here as a per-pair accept/reject with acceptance
//! `(1 + V0 cos(2δ + Δφ)) / 2`.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::db_to_survival;
use crate::source::{PairEvent, Photon};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MziConfig {
    /// Long-arm delay in ps.
    pub delay_ps: f64,
    /// Phase δ of the long arm, in radians.
    pub phase_delta: f64,
    pub insertion_loss_db: f64,
    /// Two-photon interference visibility V0.
    pub intrinsic_visibility: f64,
    /// Thermal actuation: δ = phase_per_heater_mw * P + phase_offset.
    pub phase_per_heater_mw: f64,
    pub phase_offset: f64,
}

impl Default for MziConfig {
    fn default() -> Self {
        Self {
            delay_ps: 1000.0,
            phase_delta: 0.0,
            insertion_loss_db: 1.6,
            intrinsic_visibility: 1.0,
            phase_per_heater_mw: 0.1,
            phase_offset: 0.0,
        }
    }
}

impl MziConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if !(self.delay_ps > 0.0) {
            return Err(Error::config(format!("{prefix}.delay_ps"), "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.intrinsic_visibility) {
            return Err(Error::config(
                format!("{prefix}.intrinsic_visibility"),
                "must lie in [0, 1]",
            ));
        }
        if !(self.insertion_loss_db >= 0.0) {
            return Err(Error::config(format!("{prefix}.insertion_loss_db"), "must be >= 0"));
        }
        Ok(())
    }

    /// Interferometer phase for a heater power.
    pub fn phase_for_heater(&self, heater_mw: f64) -> f64 {
        self.phase_per_heater_mw * heater_mw + self.phase_offset
    }

    pub fn survival(&self) -> f64 {
        db_to_survival(self.insertion_loss_db)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    /// Signal short arm, idler long arm.
    SideMinus,
    /// Signal long arm, idler short arm.
    SidePlus,
    /// Both photons in the same output bin.
    Center,
    /// The pair left through the unmonitored port.
    Discarded,
}

/// Output bins of both photons for a pair emitted in pulse `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PathOutcome {
    pub kind: OutcomeKind,
    pub signal_bin: u64,
    pub idler_bin: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OutcomeDistribution {
    pub side_minus: f64,
    pub side_plus: f64,
    pub center: f64,
    pub discarded: f64,
}

/// Acceptance of a same-arm pair. `phase` is the two-photon phase
/// `2δ + Δφ`.
pub fn center_acceptance(visibility: f64, phase: f64) -> f64 {
    (0.5 * (1.0 + visibility * phase.cos())).clamp(0.0, 1.0)
}

/// Outcome probabilities of one pair. `pump_phase_diff` is `φ_{j-1} - φ_j`,
/// the pump phase of the earlier pulse relative to the later one.
pub fn pair_outcome_distribution(
    pump_phase_diff: f64,
    delta: f64,
    visibility: f64,
) -> Result<OutcomeDistribution> {
    if !(0.0..=1.0).contains(&visibility) {
        return Err(Error::arg(format!(
            "visibility must lie in [0, 1], got {visibility}"
        )));
    }
    let side = 0.25;
    let center = 0.5 * center_acceptance(visibility, 2.0 * delta + pump_phase_diff);
    Ok(OutcomeDistribution {
        side_minus: side,
        side_plus: side,
        center,
        discarded: (1.0 - 2.0 * side - center).max(0.0),
    })
}

/// Samples the arms of a pair emitted in pulse `pulse` without applying any
/// loss. `accept_center` is the acceptance of the same-arm outcome landing in
/// the given output bin.
pub fn sample_path<R: Rng + ?Sized>(
    pulse: u64,
    rng: &mut R,
    accept_center: impl FnOnce(u64) -> f64,
) -> PathOutcome {
    let u: f64 = rng.random();
    let (kind, s, i) = if u < 0.25 {
        (OutcomeKind::SideMinus, pulse, pulse + 1)
    } else if u < 0.5 {
        (OutcomeKind::SidePlus, pulse + 1, pulse)
    } else {
        let bin = if u < 0.75 { pulse } else { pulse + 1 };
        if rng.random::<f64>() < accept_center(bin) {
            (OutcomeKind::Center, bin, bin)
        } else {
            (OutcomeKind::Discarded, bin, bin)
        }
    };
    PathOutcome {
        kind,
        signal_bin: s,
        idler_bin: i,
    }
}

fn shift(photon: &mut Photon, long: bool, delay_ps: f64) {
    if long {
        photon.time_ps += delay_ps;
    }
}

/// Applies a sampled outcome to the pair's photon times. Discarded pairs
/// lose both photons.
pub fn apply_path(event: &mut PairEvent, outcome: &PathOutcome, delay_ps: f64) {
    let j = event.origin_pulse;
    shift(&mut event.signal, outcome.signal_bin > j, delay_ps);
    shift(&mut event.idler, outcome.idler_bin > j, delay_ps);
    if outcome.kind == OutcomeKind::Discarded {
        event.signal.alive = false;
        event.idler.alive = false;
    }
}

/// A photon whose partner is gone: no two-photon interference, each arm
/// with probability one half.
pub fn single_photon_path<R: Rng + ?Sized>(photon: &mut Photon, delay_ps: f64, rng: &mut R) -> bool {
    let long = rng.random::<bool>();
    shift(photon, long, delay_ps);
    long
}

/// Sends a pair through the interferometer: samples the outcome, shifts the
/// long-arm photons and applies the insertion loss to each photon.
pub fn transform_pair<R: Rng + ?Sized>(
    event: &mut PairEvent,
    mzi: &MziConfig,
    pump_phase_diff: f64,
    rng: &mut R,
) -> PathOutcome {
    let phase = 2.0 * mzi.phase_delta + pump_phase_diff;
    let v0 = mzi.intrinsic_visibility;
    let outcome = sample_path(event.origin_pulse, rng, |_| center_acceptance(v0, phase));
    apply_path(event, &outcome, mzi.delay_ps);
    let survival = mzi.survival();
    for p in [&mut event.signal, &mut event.idler] {
        if p.alive && rng.random::<f64>() >= survival {
            p.alive = false;
        }
    }
    outcome
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitterKind {
    Balanced5050,
    Polarizing,
}

impl FromStr for SplitterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "balanced_50_50" | "bs" => Ok(SplitterKind::Balanced5050),
            "polarizing" | "pbs" => Ok(SplitterKind::Polarizing),
            other => Err(Error::arg(format!("unknown splitter kind `{other}`"))),
        }
    }
}

/// Polarization label of a type-II photon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarization {
    Signal,
    Idler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Detector {
    A,
    B,
}

impl Detector {
    /// Detector a polarizing splitter sends this polarization to.
    pub fn matched(pol: Polarization) -> Self {
        match pol {
            Polarization::Signal => Detector::A,
            Polarization::Idler => Detector::B,
        }
    }
}

/// Routes a photon to one of the two analysis detectors.
pub fn splitter_route<R: Rng + ?Sized>(pol: Polarization, kind: SplitterKind, rng: &mut R) -> Detector {
    match kind {
        SplitterKind::Polarizing => Detector::matched(pol),
        SplitterKind::Balanced5050 => {
            if rng.random::<bool>() {
                Detector::A
            } else {
                Detector::B
            }
        }
    }
}

/// Sweep axis for classical interference.
#[derive(Debug, Clone, PartialEq)]
pub enum PhaseSweep {
    /// Interferometer phase in radians.
    Phase(Vec<f64>),
    /// Heater power in mW, mapped through the interferometer's actuation.
    HeaterMw(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntensityPoint {
    pub x: f64,
    pub phase: f64,
    pub intensity: f64,
}

/// Single-photon (classical) fringe `I0 (1 + V cos δ) / 2`.
pub fn classical_interference(
    sweep: &PhaseSweep,
    mzi: &MziConfig,
    visibility: f64,
    i0: f64,
) -> Vec<IntensityPoint> {
    let point = |x: f64, phase: f64| IntensityPoint {
        x,
        phase,
        intensity: i0 * (1.0 + visibility * phase.cos()) / 2.0,
    };
    match sweep {
        PhaseSweep::Phase(xs) => xs.iter().map(|&d| point(d, d)).collect(),
        PhaseSweep::HeaterMw(xs) => xs
            .iter()
            .map(|&p| point(p, mzi.phase_for_heater(p)))
            .collect(),
    }
}

/// Convenience: `n` evenly spaced values over `[start, end]`.
pub fn linspace(start: f64, end: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..n)
            .map(|i| start + (end - start) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Phase grid covering one full two-photon fringe (δ from 0 to π).
pub fn fringe_phase_grid(n: usize) -> Vec<f64> {
    linspace(0.0, PI, n)
}

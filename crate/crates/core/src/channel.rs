//! Fiber link: attenuation, chromatic dispersion, dispersion compensation
//! and broadband background light.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::db_to_survival;
use crate::source::{PairEvent, Photon};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DcmConfig {
    pub enabled: bool,
    /// Fiber length whose dispersion the module cancels.
    pub compensated_km: f64,
    pub insertion_loss_db: f64,
}

impl Default for DcmConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            compensated_km: 0.0,
            insertion_loss_db: 2.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkConfig {
    pub length_km: f64,
    /// Total fiber loss of the link.
    pub loss_db: f64,
    pub dispersion_ps_per_nm_km: f64,
    pub dcm: DcmConfig,
    /// Fixed loss for uncompensated polarization drift.
    pub polarization_loss_db: f64,
    /// Broadband photons reaching each detector.
    pub background_rate_hz: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            length_km: 0.0,
            loss_db: 0.0,
            dispersion_ps_per_nm_km: 18.0,
            dcm: DcmConfig::default(),
            polarization_loss_db: 0.0,
            background_rate_hz: 0.0,
        }
    }
}

impl LinkConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let checks = [
            ("length_km", self.length_km),
            ("loss_db", self.loss_db),
            ("polarization_loss_db", self.polarization_loss_db),
            ("background_rate_hz", self.background_rate_hz),
            ("dcm.compensated_km", self.dcm.compensated_km),
            ("dcm.insertion_loss_db", self.dcm.insertion_loss_db),
        ];
        for (key, v) in checks {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(format!("{prefix}.{key}"), "must be >= 0"));
            }
        }
        Ok(())
    }

    /// Loss seen by each photon, including the compensation module.
    pub fn total_loss_db(&self) -> f64 {
        let dcm = if self.dcm.enabled {
            self.dcm.insertion_loss_db
        } else {
            0.0
        };
        self.loss_db + dcm + self.polarization_loss_db
    }

    pub fn survival(&self) -> f64 {
        db_to_survival(self.total_loss_db())
    }

    /// Net accumulated dispersion in ps/nm after compensation.
    pub fn residual_dispersion_ps_per_nm(&self) -> f64 {
        let compensated = if self.dcm.enabled {
            self.dcm.compensated_km
        } else {
            0.0
        };
        self.dispersion_ps_per_nm_km * (self.length_km - compensated)
    }
}

/// Pulse spread from dispersion `D` over a spectral width and a length.
pub fn broadening_estimate(d_ps_per_nm_km: f64, bandwidth_nm: f64, length_km: f64) -> f64 {
    d_ps_per_nm_km * bandwidth_nm * length_km
}

/// Shifts a photon by `residual * dλ`.
pub fn disperse(photon: &mut Photon, residual_ps_per_nm: f64) {
    photon.time_ps += residual_ps_per_nm * photon.dlambda_nm;
}

fn earliest_alive(e: &PairEvent) -> f64 {
    match (e.signal.alive, e.idler.alive) {
        (true, true) => e.signal.time_ps.min(e.idler.time_ps),
        (true, false) => e.signal.time_ps,
        (false, true) => e.idler.time_ps,
        (false, false) => f64::INFINITY,
    }
}

/// Propagates pairs through the link. Each photon survives independently;
/// survivors are delayed by the residual dispersion. Pairs with no surviving
/// photon are dropped and the rest are ordered by their earliest photon.
pub fn apply_link<R: Rng + ?Sized>(
    mut events: Vec<PairEvent>,
    link: &LinkConfig,
    rng: &mut R,
) -> Vec<PairEvent> {
    let survival = link.survival();
    let residual = link.residual_dispersion_ps_per_nm();
    for e in &mut events {
        for p in [&mut e.signal, &mut e.idler] {
            if !p.alive {
                continue;
            }
            if rng.random::<f64>() >= survival {
                p.alive = false;
            } else {
                disperse(p, residual);
            }
        }
    }
    events.retain(|e| e.signal.alive || e.idler.alive);
    events.sort_by(|a, b| earliest_alive(a).total_cmp(&earliest_alive(b)));
    events
}

/// Homogeneous Poisson arrivals over `[start_ps, end_ps)`, sorted.
pub fn inject_background<R: Rng + ?Sized>(
    start_ps: f64,
    end_ps: f64,
    rate_hz: f64,
    rng: &mut R,
) -> Vec<f64> {
    let mut out = Vec::new();
    if rate_hz <= 0.0 || end_ps <= start_ps {
        return out;
    }
    let gap = Exp::new(rate_hz * 1e-12).expect("positive rate");
    let mut t = start_ps;
    loop {
        t += gap.sample(rng);
        if t >= end_ps {
            break;
        }
        out.push(t);
    }
    out
}

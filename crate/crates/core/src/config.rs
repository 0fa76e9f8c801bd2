//! Run and scenario configuration, TOML loading and the named presets.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::analysis::DEFAULT_ACCIDENTAL_OFFSETS_PS;
use crate::channel::{DcmConfig, LinkConfig};
use crate::detector::DetectorConfig;
use crate::error::{Error, Result};
use crate::model::{db_to_survival, Units};
use crate::optics::{MziConfig, SplitterKind};
use crate::source::{SourceConfig, MU_WARN_THRESHOLD};

/// The two detectors of a single receiver; `a` sees the signal
/// polarization, `b` the idler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorPair {
    pub a: DetectorConfig,
    pub b: DetectorConfig,
}

impl Default for DetectorPair {
    fn default() -> Self {
        Self {
            a: DetectorConfig::snspd(0),
            b: DetectorConfig::snspd(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub pulse_count: u64,
    pub seed: u64,
    /// Mean pairs per pulse.
    pub mu: f64,
    /// Pump phase increment between consecutive pulses, radians.
    pub pump_phase_step: f64,
    pub units: Units,
    pub source: SourceConfig,
    pub mzi: MziConfig,
    pub link: LinkConfig,
    pub detectors: DetectorPair,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            pulse_count: 1_000_000_000,
            seed: 0,
            mu: 0.0018,
            pump_phase_step: 0.0,
            units: Units::default(),
            source: SourceConfig::default(),
            mzi: MziConfig::default(),
            link: LinkConfig::default(),
            detectors: DetectorPair::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self, prefix: &str) -> Result<Vec<String>> {
        let p = |k: &str| {
            if prefix.is_empty() {
                k.to_string()
            } else {
                format!("{prefix}.{k}")
            }
        };
        let mut warnings = Vec::new();
        if !(self.mu >= 0.0) || self.mu >= 1.0 {
            return Err(Error::config(p("mu"), "must lie in [0, 1)"));
        }
        if self.mu >= MU_WARN_THRESHOLD {
            warnings.push(format!(
                "{}: mu = {} is above the {} multi-pair bound",
                p("mu"),
                self.mu,
                MU_WARN_THRESHOLD
            ));
        }
        if !self.pump_phase_step.is_finite() {
            return Err(Error::config(p("pump_phase_step"), "must be finite"));
        }
        self.units.validate(&p("units"))?;
        self.source.validate(&p("source"))?;
        self.mzi.validate(&p("mzi"))?;
        check_delay(&self.mzi, &self.units, &p("mzi.delay_ps"))?;
        self.link.validate(&p("link"))?;
        self.detectors.a.validate(&p("detectors.a"))?;
        self.detectors.b.validate(&p("detectors.b"))?;
        if self.detectors.a.id == self.detectors.b.id {
            return Err(Error::config(p("detectors.b.id"), "detector ids must differ"));
        }
        Ok(warnings)
    }

    pub fn duration_ps(&self) -> f64 {
        self.pulse_count as f64 * self.units.bin_period_ps
    }

    pub fn duration_s(&self) -> f64 {
        self.duration_ps() * 1e-12
    }
}

fn check_delay(mzi: &MziConfig, units: &Units, key: &str) -> Result<()> {
    if (mzi.delay_ps - units.bin_period_ps).abs() > 1e-9 * units.bin_period_ps {
        return Err(Error::config(
            key,
            format!(
                "interferometer delay {} ps must equal the bin period {} ps",
                mzi.delay_ps, units.bin_period_ps
            ),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// One interferometer followed by a 50:50 splitter.
    SingleReceiverBs,
    /// One interferometer followed by a polarizing splitter.
    SingleReceiverPbs,
    /// Pairs split at the source, one interferometer per party.
    TwoReceiver,
}

impl Topology {
    pub fn splitter(self) -> SplitterKind {
        match self {
            Topology::SingleReceiverPbs => SplitterKind::Polarizing,
            _ => SplitterKind::Balanced5050,
        }
    }
}

/// One party of the two-receiver layout. Detector 0 reads bit 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReceiverConfig {
    pub mzi: MziConfig,
    pub link: LinkConfig,
    pub detectors: [DetectorConfig; 2],
}

impl Default for ReceiverConfig {
    fn default() -> Self {
        Self {
            mzi: MziConfig::default(),
            link: LinkConfig::default(),
            detectors: [DetectorConfig::snspd(0), DetectorConfig::snspd(1)],
        }
    }
}

impl ReceiverConfig {
    pub fn validate(&self, prefix: &str, units: &Units) -> Result<()> {
        self.mzi.validate(&format!("{prefix}.mzi"))?;
        check_delay(&self.mzi, units, &format!("{prefix}.mzi.delay_ps"))?;
        self.link.validate(&format!("{prefix}.link"))?;
        for (i, d) in self.detectors.iter().enumerate() {
            d.validate(&format!("{prefix}.detectors[{i}]"))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Receivers {
    pub alice: ReceiverConfig,
    pub bob: ReceiverConfig,
}

impl Default for Receivers {
    fn default() -> Self {
        let mut bob = ReceiverConfig::default();
        bob.detectors[0].id = 2;
        bob.detectors[1].id = 3;
        Self {
            alice: ReceiverConfig::default(),
            bob,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSettings {
    pub bin_width_ps: f64,
    pub max_delay_ps: f64,
    /// Coincidence window for peak areas, CAR and sifting.
    pub window_ps: f64,
    pub accidental_offsets_ps: Vec<f64>,
    /// Fit the fringe frequency instead of fixing it from the heater
    /// calibration.
    pub free_frequency: bool,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self {
            bin_width_ps: 10.0,
            max_delay_ps: 4000.0,
            window_ps: 400.0,
            accidental_offsets_ps: DEFAULT_ACCIDENTAL_OFFSETS_PS.to_vec(),
            free_frequency: false,
        }
    }
}

impl AnalysisSettings {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        for (k, v) in [
            ("bin_width_ps", self.bin_width_ps),
            ("max_delay_ps", self.max_delay_ps),
            ("window_ps", self.window_ps),
        ] {
            if !(v > 0.0) {
                return Err(Error::config(format!("{prefix}.{k}"), "must be > 0"));
            }
        }
        for (i, o) in self.accidental_offsets_ps.iter().enumerate() {
            if o.abs() + self.window_ps / 2.0 > self.max_delay_ps {
                return Err(Error::config(
                    format!("{prefix}.accidental_offsets_ps[{i}]"),
                    "window extends beyond max_delay_ps",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSettings {
    /// Points of the default phase grid over [0, π).
    pub phase_points: usize,
    /// Explicit interferometer phases; overrides `phase_points`.
    pub phases: Option<Vec<f64>>,
    /// Heater powers; overrides both phase settings.
    pub heater_mw: Option<Vec<f64>>,
    /// Pulses simulated per sweep point.
    pub point_pulses: u64,
    pub power_mw: Vec<f64>,
    pub brightness_hz_per_mw: f64,
    pub calibration: f64,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            phase_points: 20,
            phases: None,
            heater_mw: None,
            point_pulses: 10_000_000_000,
            power_mw: vec![0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0, 1.5, 2.0],
            brightness_hz_per_mw: 7.2e6,
            calibration: 0.5,
        }
    }
}

impl SweepSettings {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let n = match (&self.heater_mw, &self.phases) {
            (Some(h), _) => h.len(),
            (None, Some(p)) => p.len(),
            _ => self.phase_points,
        };
        if n < 5 {
            return Err(Error::config(
                format!("{prefix}.phase_points"),
                "a phase sweep needs at least 5 points",
            ));
        }
        if self.point_pulses == 0 {
            return Err(Error::config(format!("{prefix}.point_pulses"), "must be > 0"));
        }
        if let Some(i) = self.power_mw.iter().position(|&p| !(p > 0.0)) {
            return Err(Error::config(format!("{prefix}.power_mw[{i}]"), "must be > 0"));
        }
        if !(self.brightness_hz_per_mw > 0.0) {
            return Err(Error::config(format!("{prefix}.brightness_hz_per_mw"), "must be > 0"));
        }
        if !(self.calibration > 0.0 && self.calibration <= 1.0) {
            return Err(Error::config(format!("{prefix}.calibration"), "must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub name: String,
    pub topology: Topology,
    pub run: RunConfig,
    pub receivers: Receivers,
    pub analysis: AnalysisSettings,
    pub sweep: SweepSettings,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "custom".into(),
            topology: Topology::SingleReceiverBs,
            run: RunConfig::default(),
            receivers: Receivers::default(),
            analysis: AnalysisSettings::default(),
            sweep: SweepSettings::default(),
        }
    }
}

pub const PRESETS: [&str; 2] = ["back_to_back", "vienna_link"];

impl Scenario {
    /// Validates every sub-config; returns non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let warnings = self.run.validate("run")?;
        if self.topology == Topology::TwoReceiver {
            self.receivers.alice.validate("receivers.alice", &self.run.units)?;
            self.receivers.bob.validate("receivers.bob", &self.run.units)?;
            if self.analysis.window_ps >= self.run.units.bin_period_ps / 2.0 {
                return Err(Error::config(
                    "analysis.window_ps",
                    "sifting needs a window below half the bin period",
                ));
            }
        }
        self.analysis.validate("analysis")?;
        self.sweep.validate("sweep")?;
        Ok(warnings)
    }

    pub fn preset(name: &str) -> Option<Scenario> {
        match name {
            "back_to_back" => Some(back_to_back()),
            "vienna_link" => Some(vienna_link()),
            _ => None,
        }
    }

    pub fn unknown_preset(name: &str) -> Error {
        Error::config(
            "scenario",
            format!("unknown scenario `{name}`; available presets: {}", PRESETS.join(", ")),
        )
    }

    /// Parses a scenario file. A top-level `preset = "<name>"` key starts
    /// from that preset and overlays the remaining keys on it.
    pub fn from_toml_str(text: &str) -> Result<Scenario> {
        let value: toml::Table = toml::from_str(text).map_err(|e| {
            Error::config(
                "<document>",
                e.message().to_string() + &span_note(text, e.span()),
            )
        })?;
        let mut value = toml::Value::Table(value);
        if let Some(base) = value.as_table_mut().and_then(|t| t.remove("preset")) {
            let name = base
                .as_str()
                .ok_or_else(|| Error::config("preset", "must be a string"))?;
            let preset = Scenario::preset(name).ok_or_else(|| {
                Error::config(
                    "preset",
                    format!("unknown preset `{name}`; available: {}", PRESETS.join(", ")),
                )
            })?;
            let mut merged = toml::Value::try_from(&preset)
                .map_err(|e| Error::config("preset", e.to_string()))?;
            overlay(&mut merged, value);
            value = merged;
        }
        let scenario: Scenario = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            Error::config(
                if path == "." { "<document>".to_string() } else { path },
                e.into_inner().to_string(),
            )
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path)?;
        Scenario::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Resource(e.to_string()))
    }

    /// Loss budget per photon in dB, by component.
    pub fn loss_budget(&self) -> Vec<(&'static str, f64)> {
        let r = &self.run;
        let mut v = vec![("source_coupling", r.source.coupling_loss_db)];
        v.push(("link", r.link.loss_db));
        if r.link.dcm.enabled {
            v.push(("dcm", r.link.dcm.insertion_loss_db));
        }
        v.push(("polarization", r.link.polarization_loss_db));
        v.push(("mzi", r.mzi.insertion_loss_db));
        if self.topology == Topology::SingleReceiverBs {
            v.push(("beam_splitter", 3.0103));
        }
        v
    }

    /// Probability that one photon reaches its detector and is detected.
    pub fn photon_detection_probability(&self) -> f64 {
        let db: f64 = self.loss_budget().iter().map(|(_, l)| l).sum();
        db_to_survival(db) * self.run.detectors.a.efficiency
    }

    /// Phases of the sweep grid and the heater powers, if any.
    pub fn sweep_grid(&self) -> (Vec<f64>, Option<Vec<f64>>) {
        let mzi = &self.run.mzi;
        match (&self.sweep.heater_mw, &self.sweep.phases) {
            (Some(h), _) => (h.iter().map(|&p| mzi.phase_for_heater(p)).collect(), Some(h.clone())),
            (None, Some(p)) => (p.clone(), None),
            _ => (crate::optics::fringe_phase_grid(self.sweep.phase_points), None),
        }
    }

    /// Fringe frequency in the sweep variable.
    pub fn fringe_frequency(&self) -> f64 {
        if self.sweep.heater_mw.is_some() {
            2.0 * self.run.mzi.phase_per_heater_mw
        } else {
            2.0
        }
    }
}

fn span_note(text: &str, span: Option<std::ops::Range<usize>>) -> String {
    match span {
        Some(s) => {
            let line = text[..s.start.min(text.len())].matches('\n').count() + 1;
            format!(" (line {line})")
        }
        None => String::new(),
    }
}

fn overlay(base: &mut toml::Value, top: toml::Value) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => overlay(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Source and receiver in one lab, no fiber link. Jitter is set so that the
/// two-detector coincidence peak is 350 ps wide.
pub fn back_to_back() -> Scenario {
    let det = |id| DetectorConfig {
        jitter_fwhm_ps: 350.0 / 2f64.sqrt(),
        ..DetectorConfig::snspd(id)
    };
    Scenario {
        name: "back_to_back".into(),
        topology: Topology::SingleReceiverBs,
        run: RunConfig {
            mu: 1e-3,
            source: SourceConfig {
                coupling_loss_db: 3.0,
                ..SourceConfig::default()
            },
            mzi: MziConfig {
                intrinsic_visibility: 0.95,
                ..MziConfig::default()
            },
            detectors: DetectorPair { a: det(0), b: det(1) },
            ..RunConfig::default()
        },
        analysis: AnalysisSettings {
            window_ps: 350.0,
            ..AnalysisSettings::default()
        },
        sweep: SweepSettings {
            point_pulses: 5_000_000_000,
            ..SweepSettings::default()
        },
        ..Scenario::default()
    }
}

/// Residual dispersion left by the compensation module, per km of link.
pub const VIENNA_RESIDUAL_PS_PER_NM_KM: f64 = 1.5;

/// 28.6 km deployed fiber with dispersion compensation, a 50:50 splitter
/// and SNSPDs, with 15 kc/s detected background per detector.
pub fn vienna_link() -> Scenario {
    let length_km = 28.6;
    let d = 18.0;
    let residual = VIENNA_RESIDUAL_PS_PER_NM_KM * length_km;
    Scenario {
        name: "vienna_link".into(),
        topology: Topology::SingleReceiverBs,
        run: RunConfig {
            mu: 5e-3,
            source: SourceConfig {
                coupling_loss_db: 3.0,
                ..SourceConfig::default()
            },
            mzi: MziConfig {
                intrinsic_visibility: 0.95,
                ..MziConfig::default()
            },
            link: LinkConfig {
                length_km,
                loss_db: 9.5,
                dispersion_ps_per_nm_km: d,
                dcm: DcmConfig {
                    enabled: true,
                    compensated_km: length_km - residual / d,
                    insertion_loss_db: 2.9,
                },
                polarization_loss_db: 3.0,
                background_rate_hz: 15_000.0 / 0.8,
            },
            ..RunConfig::default()
        },
        analysis: AnalysisSettings {
            window_ps: 400.0,
            ..AnalysisSettings::default()
        },
        sweep: SweepSettings {
            point_pulses: 500_000_000_000,
            ..SweepSettings::default()
        },
        ..Scenario::default()
    }
}

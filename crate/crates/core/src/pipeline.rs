//! End-to-end simulation: source, interferometer, link, splitter and
//! detectors, producing per-channel tag streams.
//!
//! Pulses are processed in fixed blocks, each with its own random
//! substreams, so output is identical for any thread count. Long runs are
//! cut into segments that can be consumed one at a time.

use std::ops::Range;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{disperse, inject_background, LinkConfig};
use crate::config::{ReceiverConfig, Receivers, RunConfig, Scenario, Topology};
use crate::detector::{apply_dead_time, detect, DetectorConfig};
use crate::error::Result;
use crate::model::{db_to_survival, TimeTag};
use crate::optics::{
    apply_path, center_acceptance, sample_path, single_photon_path, OutcomeKind, SplitterKind,
};
use crate::rng::{stage_stream, Stage};
use crate::source::{emit_surviving_pairs, PairEvent, Photon, PulseTrain};

pub const BLOCK_PULSES: u64 = 1 << 24;
pub const SEGMENT_PULSES: u64 = 1 << 34;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PipelineStats {
    /// Pairs with at least one photon reaching a detector.
    pub pairs: u64,
    pub center: u64,
    pub side: u64,
    pub discarded: u64,
    pub lone_photons: u64,
    pub background_photons: u64,
}

impl PipelineStats {
    pub fn add(&mut self, o: &PipelineStats) {
        self.pairs += o.pairs;
        self.center += o.center;
        self.side += o.side;
        self.discarded += o.discarded;
        self.lone_photons += o.lone_photons;
        self.background_photons += o.background_photons;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    /// One sorted stream per detector, in topology order.
    pub channels: Vec<Vec<TimeTag>>,
    pub pulses: Range<u64>,
    pub bin_period_ps: f64,
    pub tick_resolution_ps: f64,
    pub stats: PipelineStats,
}

impl SimOutput {
    pub fn duration_s(&self) -> f64 {
        (self.pulses.end - self.pulses.start) as f64 * self.bin_period_ps * 1e-12
    }

    pub fn ticks(&self, ch: usize) -> Vec<u64> {
        self.channels[ch].iter().map(|t| t.ticks).collect()
    }
}

fn train(run: &RunConfig) -> PulseTrain {
    PulseTrain {
        bin_period_ps: run.units.bin_period_ps,
        pulse_width_ps: run.source.pulse_width_ps,
        pump_phase_step: run.pump_phase_step,
    }
}

/// `φ_{j-1} - φ_j` for a linear pump phase.
fn pump_phase_diff(run: &RunConfig) -> f64 {
    -run.pump_phase_step
}

fn blocks(pulses: &Range<u64>) -> Vec<(u64, Range<u64>)> {
    let first = pulses.start / BLOCK_PULSES;
    let last = pulses.end.div_ceil(BLOCK_PULSES);
    (first..last)
        .map(|b| {
            let lo = (b * BLOCK_PULSES).max(pulses.start);
            let hi = ((b + 1) * BLOCK_PULSES).min(pulses.end);
            (b, lo..hi)
        })
        .filter(|(_, r)| !r.is_empty())
        .collect()
}

struct BlockOut {
    arrivals: Vec<Vec<f64>>,
    stats: PipelineStats,
}

fn splitter_survival(kind: SplitterKind) -> f64 {
    match kind {
        // random routing, and the detector behind the wrong output only
        // registers the other polarization
        SplitterKind::Balanced5050 => 0.5,
        SplitterKind::Polarizing => 1.0,
    }
}

fn link_survival(run: &RunConfig, link: &LinkConfig) -> f64 {
    db_to_survival(run.source.coupling_loss_db) * link.survival()
}

/// Photon arrivals at the two detectors of a single receiver for one block.
fn single_block(
    run: &RunConfig,
    splitter: SplitterKind,
    block: u64,
    pulses: Range<u64>,
) -> Result<BlockOut> {
    let common = link_survival(run, &run.link) * run.mzi.survival() * splitter_survival(splitter);
    let (eff_a, eff_b) = (run.detectors.a.efficiency, run.detectors.b.efficiency);
    let mut src = stage_stream(run.seed, Stage::Source, block);
    let events = emit_surviving_pairs(
        pulses.clone(),
        run.mu,
        (common * eff_a, common * eff_b),
        &train(run),
        &run.source.spectrum,
        &mut src,
    )?;
    let mut rng = stage_stream(run.seed, Stage::Optics, block);
    let phase = 2.0 * run.mzi.phase_delta + pump_phase_diff(run);
    let v0 = run.mzi.intrinsic_visibility;
    let delay = run.mzi.delay_ps;
    let residual = run.link.residual_dispersion_ps_per_nm();
    let mut stats = PipelineStats {
        pairs: events.len() as u64,
        ..PipelineStats::default()
    };
    let mut a = Vec::with_capacity(events.len());
    let mut b = Vec::with_capacity(events.len());
    for mut ev in events {
        if ev.signal.alive && ev.idler.alive {
            let out = sample_path(ev.origin_pulse, &mut rng, |_| center_acceptance(v0, phase));
            apply_path(&mut ev, &out, delay);
            match out.kind {
                OutcomeKind::Center => stats.center += 1,
                OutcomeKind::Discarded => stats.discarded += 1,
                _ => stats.side += 1,
            }
        } else {
            stats.lone_photons += 1;
            let p = if ev.signal.alive { &mut ev.signal } else { &mut ev.idler };
            single_photon_path(p, delay, &mut rng);
        }
        push_alive(&mut a, &mut ev.signal, residual);
        push_alive(&mut b, &mut ev.idler, residual);
    }
    let span = span_ps(run, &pulses);
    let mut bg = stage_stream(run.seed, Stage::Background, block);
    let rate = run.link.background_rate_hz;
    for (arr, eff) in [(&mut a, eff_a), (&mut b, eff_b)] {
        let extra = inject_background(span.0, span.1, rate * eff, &mut bg);
        stats.background_photons += extra.len() as u64;
        arr.extend(extra);
    }
    Ok(BlockOut {
        arrivals: vec![a, b],
        stats,
    })
}

fn push_alive(out: &mut Vec<f64>, p: &mut Photon, residual: f64) {
    if p.alive {
        disperse(p, residual);
        out.push(p.time_ps);
    }
}

fn span_ps(run: &RunConfig, pulses: &Range<u64>) -> (f64, f64) {
    let t = run.units.bin_period_ps;
    (pulses.start as f64 * t, pulses.end as f64 * t)
}

/// Sends one photon through a receiver: arm choice is made by the caller,
/// this picks the port and applies the detector efficiency.
fn port_detect<R: Rng + ?Sized>(port: usize, rx: &ReceiverConfig, rng: &mut R) -> Option<usize> {
    let eff = rx.detectors[port].efficiency;
    (eff >= 1.0 || rng.random::<f64>() < eff).then_some(port)
}

/// Photon arrivals at Alice's and Bob's four detectors for one block.
fn two_receiver_block(
    run: &RunConfig,
    rx: &Receivers,
    block: u64,
    pulses: Range<u64>,
) -> Result<BlockOut> {
    let (alice, bob) = (&rx.alice, &rx.bob);
    let sa = link_survival(run, &alice.link) * alice.mzi.survival();
    let sb = link_survival(run, &bob.link) * bob.mzi.survival();
    let mut src = stage_stream(run.seed, Stage::Source, block);
    let events = emit_surviving_pairs(
        pulses.clone(),
        run.mu,
        (sa, sb),
        &train(run),
        &run.source.spectrum,
        &mut src,
    )?;
    let mut rng = stage_stream(run.seed, Stage::Optics, block);
    let theta = alice.mzi.phase_delta + bob.mzi.phase_delta + pump_phase_diff(run);
    let v0 = alice.mzi.intrinsic_visibility.min(bob.mzi.intrinsic_visibility);
    let (ra, rb) = (
        alice.link.residual_dispersion_ps_per_nm(),
        bob.link.residual_dispersion_ps_per_nm(),
    );
    let mut stats = PipelineStats {
        pairs: events.len() as u64,
        ..PipelineStats::default()
    };
    let mut arrivals = vec![Vec::new(); 4];
    for ev in events {
        let PairEvent {
            mut signal,
            mut idler,
            ..
        } = ev;
        let (mut port_s, mut port_i) = (rng.random_range(0..2usize), rng.random_range(0..2usize));
        if signal.alive && idler.alive {
            let long_s = single_photon_path(&mut signal, alice.mzi.delay_ps, &mut rng);
            let long_i = single_photon_path(&mut idler, bob.mzi.delay_ps, &mut rng);
            if long_s == long_i {
                stats.center += 1;
                let same = rng.random::<f64>() < center_acceptance(v0, theta);
                port_i = if same { port_s } else { 1 - port_s };
            } else {
                stats.side += 1;
            }
        } else {
            stats.lone_photons += 1;
            if signal.alive {
                single_photon_path(&mut signal, alice.mzi.delay_ps, &mut rng);
            } else {
                single_photon_path(&mut idler, bob.mzi.delay_ps, &mut rng);
            }
        }
        if signal.alive {
            if let Some(p) = port_detect(port_s, alice, &mut rng) {
                port_s = p;
                push_alive(&mut arrivals[port_s], &mut signal, ra);
            }
        }
        if idler.alive {
            if let Some(p) = port_detect(port_i, bob, &mut rng) {
                port_i = p;
                push_alive(&mut arrivals[2 + port_i], &mut idler, rb);
            }
        }
    }
    let span = span_ps(run, &pulses);
    let mut bg = stage_stream(run.seed, Stage::Background, block);
    for (ch, arr) in arrivals.iter_mut().enumerate() {
        let r = if ch < 2 { alice } else { bob };
        let rate = r.link.background_rate_hz * r.detectors[ch % 2].efficiency;
        let extra = inject_background(span.0, span.1, rate, &mut bg);
        stats.background_photons += extra.len() as u64;
        arr.extend(extra);
    }
    Ok(BlockOut { arrivals, stats })
}

/// Detector configs of a scenario, in channel order.
pub fn channel_detectors(scenario: &Scenario) -> Vec<DetectorConfig> {
    match scenario.topology {
        Topology::TwoReceiver => {
            let r = &scenario.receivers;
            vec![
                r.alice.detectors[0],
                r.alice.detectors[1],
                r.bob.detectors[0],
                r.bob.detectors[1],
            ]
        }
        _ => vec![scenario.run.detectors.a, scenario.run.detectors.b],
    }
}

/// Simulates one segment of pulses. `segment` selects the detector
/// substreams and must be unique within a run.
pub fn simulate_segment(scenario: &Scenario, pulses: Range<u64>, segment: u64) -> Result<SimOutput> {
    let run = &scenario.run;
    let outs: Vec<BlockOut> = blocks(&pulses)
        .into_par_iter()
        .map(|(b, r)| match scenario.topology {
            Topology::TwoReceiver => two_receiver_block(run, &scenario.receivers, b, r),
            t => single_block(run, t.splitter(), b, r),
        })
        .collect::<Result<_>>()?;
    let detectors = channel_detectors(scenario);
    let mut stats = PipelineStats::default();
    let mut per_channel: Vec<Vec<f64>> = vec![Vec::new(); detectors.len()];
    for o in outs {
        stats.add(&o.stats);
        for (acc, a) in per_channel.iter_mut().zip(o.arrivals) {
            acc.extend(a);
        }
    }
    let span = span_ps(run, &pulses);
    let tick = run.units.tick_resolution_ps;
    let channels = per_channel
        .into_par_iter()
        .zip(detectors.par_iter())
        .enumerate()
        .map(|(ch, (mut arr, det))| {
            arr.sort_unstable_by(f64::total_cmp);
            // efficiency was applied upstream
            let cfg = DetectorConfig {
                efficiency: 1.0,
                ..*det
            };
            let mut rng = stage_stream(
                run.seed,
                Stage::Detector,
                segment * detectors.len() as u64 + ch as u64,
            );
            detect(&arr, span, &cfg, tick, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimOutput {
        channels,
        pulses,
        bin_period_ps: run.units.bin_period_ps,
        tick_resolution_ps: tick,
        stats,
    })
}

/// Keeps the dead-time blockade consistent across segment boundaries.
struct DeadTimeCarry {
    last: Vec<Option<u64>>,
    dead: Vec<u64>,
}

impl DeadTimeCarry {
    fn new(scenario: &Scenario) -> Self {
        let tick = scenario.run.units.tick_resolution_ps;
        let dead: Vec<u64> = channel_detectors(scenario)
            .iter()
            .map(|d| (d.dead_time_ps() / tick).round() as u64)
            .collect();
        Self {
            last: vec![None; dead.len()],
            dead,
        }
    }

    fn apply(&mut self, out: &mut SimOutput) {
        for (ch, tags) in out.channels.iter_mut().enumerate() {
            let dead = self.dead[ch];
            if let Some(l) = self.last[ch] {
                let cut = tags
                    .iter()
                    .position(|t| t.ticks >= l && (dead == 0 || t.ticks - l >= dead))
                    .unwrap_or(tags.len());
                tags.drain(..cut);
            }
            if let Some(t) = tags.last() {
                self.last[ch] = Some(t.ticks);
            }
        }
    }
}

/// Runs all pulses segment by segment, handing each segment to `visit`.
pub fn for_each_segment(
    scenario: &Scenario,
    pulse_count: u64,
    mut visit: impl FnMut(SimOutput) -> Result<()>,
) -> Result<()> {
    let mut carry = DeadTimeCarry::new(scenario);
    let mut start = 0;
    let mut segment = 0;
    while start < pulse_count {
        let end = (start + SEGMENT_PULSES).min(pulse_count);
        let mut out = simulate_segment(scenario, start..end, segment)?;
        carry.apply(&mut out);
        visit(out)?;
        start = end;
        segment += 1;
    }
    Ok(())
}

/// Full run of `scenario.run.pulse_count` pulses held in memory.
pub fn simulate(scenario: &Scenario) -> Result<SimOutput> {
    let n = scenario.run.pulse_count;
    let detectors = channel_detectors(scenario);
    let mut all = SimOutput {
        channels: vec![Vec::new(); detectors.len()],
        pulses: 0..n,
        bin_period_ps: scenario.run.units.bin_period_ps,
        tick_resolution_ps: scenario.run.units.tick_resolution_ps,
        stats: PipelineStats::default(),
    };
    for_each_segment(scenario, n, |out| {
        all.stats.add(&out.stats);
        for (acc, tags) in all.channels.iter_mut().zip(out.channels) {
            acc.extend(tags);
        }
        Ok(())
    })?;
    // photons delayed past a segment boundary can overtake the next
    // segment's first tags
    for (ch, tags) in all.channels.iter_mut().enumerate() {
        tags.sort_by_key(|t| t.ticks);
        let dead = (detectors[ch].dead_time_ps() / all.tick_resolution_ps).round() as u64;
        if dead > 0 {
            let mut ticks: Vec<u64> = tags.iter().map(|t| t.ticks).collect();
            apply_dead_time(&mut ticks, dead);
            if ticks.len() != tags.len() {
                let id = detectors[ch].id;
                *tags = ticks.into_iter().map(|t| TimeTag::new(t, id)).collect();
            }
        }
    }
    Ok(all)
}

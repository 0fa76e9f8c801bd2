//! Two-receiver key distribution: basis sifting, QBER and key fraction.
//!
//! Coincidences are matched one-to-one, earliest Alice tag first. A match at
//! delay near 0 is a phase-basis event whose bit is the detector that
//! clicked; a match near ±T is a time-basis event whose bit is the slot
//! parity. Bob refers his slot back to Alice's using the announced peak.

use serde::Serialize;
use std::f64::consts::FRAC_1_SQRT_2;
use std::io::Write;

use crate::config::{Scenario, Topology};
use crate::error::{Error, Result};
use crate::model::{ensure_sorted, TimeTag};
use crate::pipeline::{simulate, PipelineStats};
use crate::tagio::merge_channels;

/// Visibility above which a CHSH inequality can be violated.
pub const CHSH_VISIBILITY: f64 = FRAC_1_SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    Time,
    Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SiftedBlock {
    pub basis: Basis,
    #[serde(skip)]
    pub alice_bits: Vec<u8>,
    #[serde(skip)]
    pub bob_bits: Vec<u8>,
    pub pair_count: usize,
    pub errors: usize,
    /// Mismatch fraction; 0 for an empty block.
    pub qber: f64,
    pub qber_sigma: f64,
}

impl SiftedBlock {
    fn new(basis: Basis, alice_bits: Vec<u8>, bob_bits: Vec<u8>) -> Self {
        let n = alice_bits.len();
        let errors = alice_bits.iter().zip(&bob_bits).filter(|(a, b)| a != b).count();
        let qber = if n == 0 { 0.0 } else { errors as f64 / n as f64 };
        let qber_sigma = if n == 0 {
            0.0
        } else {
            (qber * (1.0 - qber) / n as f64).sqrt()
        };
        Self {
            basis,
            alice_bits,
            bob_bits,
            pair_count: n,
            errors,
            qber,
            qber_sigma,
        }
    }

    /// Correlation `E = P(equal) - P(different)`.
    pub fn correlation(&self) -> f64 {
        1.0 - 2.0 * self.qber
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SiftResult {
    pub time: SiftedBlock,
    pub phase: SiftedBlock,
    pub unmatched_alice: usize,
    pub unmatched_bob: usize,
}

impl SiftResult {
    pub fn blocks(&self) -> Vec<&SiftedBlock> {
        vec![&self.time, &self.phase]
    }
}

fn slot(ps: f64, period: f64) -> i64 {
    (ps / period).round() as i64
}

/// Matches Alice's and Bob's tags and sorts each match into a basis.
/// Channel parity gives the detector bit.
pub fn sift(
    alice: &[TimeTag],
    bob: &[TimeTag],
    tick_resolution_ps: f64,
    window_ps: f64,
    bin_period_ps: f64,
) -> Result<SiftResult> {
    if !(window_ps > 0.0) || window_ps >= bin_period_ps / 2.0 {
        return Err(Error::arg(format!(
            "sifting window {window_ps} ps must lie in (0, {}) ps",
            bin_period_ps / 2.0
        )));
    }
    ensure_sorted(alice, "alice")?;
    ensure_sorted(bob, "bob")?;
    let t = |tag: &TimeTag| tag.ticks as f64 * tick_resolution_ps;
    let half = window_ps / 2.0;
    let reach = bin_period_ps + half;
    let mut used = vec![false; bob.len()];
    let mut lo = 0;
    let (mut ta, mut tb) = (Vec::new(), Vec::new());
    let (mut pa, mut pb) = (Vec::new(), Vec::new());
    let mut matched_alice = 0;
    for a in alice {
        let ta_ps = t(a);
        while lo < bob.len() && t(&bob[lo]) < ta_ps - reach {
            lo += 1;
        }
        let mut best: Option<(f64, f64, usize, i64)> = None;
        for (j, b) in bob.iter().enumerate().skip(lo) {
            let d = t(b) - ta_ps;
            if d > reach {
                break;
            }
            if used[j] {
                continue;
            }
            let c = (d / bin_period_ps).round().clamp(-1.0, 1.0);
            let r = (d - c * bin_period_ps).abs();
            if r > half {
                continue;
            }
            let key = (r, d.abs(), j, c as i64);
            if best.is_none_or(|bk| (key.0, key.1) < (bk.0, bk.1)) {
                best = Some(key);
            }
        }
        let Some((_, _, j, c)) = best else { continue };
        used[j] = true;
        matched_alice += 1;
        let b = &bob[j];
        if c == 0 {
            pa.push(a.channel % 2);
            pb.push(b.channel % 2);
        } else {
            let sa = slot(ta_ps, bin_period_ps);
            let sb = slot(t(b), bin_period_ps) - c;
            ta.push(sa.rem_euclid(2) as u8);
            tb.push(sb.rem_euclid(2) as u8);
        }
    }
    Ok(SiftResult {
        time: SiftedBlock::new(Basis::Time, ta, tb),
        phase: SiftedBlock::new(Basis::Phase, pa, pb),
        unmatched_alice: alice.len() - matched_alice,
        unmatched_bob: used.iter().filter(|u| !**u).count(),
    })
}

pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        0.0
    } else {
        -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
    }
}

/// Asymptotic key fraction `max(0, 1 - h2(e_t) - h2(e_p))`.
pub fn key_fraction(qber_time: f64, qber_phase: f64) -> Result<f64> {
    for q in [qber_time, qber_phase] {
        if !(0.0..=0.5).contains(&q) {
            return Err(Error::arg(format!("QBER {q} outside [0, 0.5]")));
        }
    }
    Ok((1.0 - binary_entropy(qber_time) - binary_entropy(qber_phase)).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ThresholdCheck {
    pub entangled: bool,
    pub key_positive: bool,
}

pub fn visibility_threshold_check(visibility: f64) -> ThresholdCheck {
    let v = visibility.clamp(0.0, 1.0);
    let q = (1.0 - v) / 2.0;
    ThresholdCheck {
        entangled: v > CHSH_VISIBILITY,
        key_positive: key_fraction(q, q).map(|k| k > 0.0).unwrap_or(false),
    }
}

/// Error rates expected from accidental matches alone. Phase-basis
/// accidentals carry random bits; time-basis accidentals only err when the
/// slot rounding of the two tags disagrees.
pub fn accidental_qber(
    accidental_fraction: f64,
    basis: Basis,
    window_ps: f64,
    bin_period_ps: f64,
) -> f64 {
    match basis {
        Basis::Phase => 0.5 * accidental_fraction,
        Basis::Time => accidental_fraction * window_ps / (4.0 * bin_period_ps),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QkdTags {
    pub alice: Vec<TimeTag>,
    pub bob: Vec<TimeTag>,
    pub tick_resolution_ps: f64,
    pub bin_period_ps: f64,
    pub duration_s: f64,
    pub stats: PipelineStats,
}

/// Runs a two-receiver scenario: signal photons go to Alice, idlers to Bob.
pub fn distribute_and_detect(scenario: &Scenario) -> Result<QkdTags> {
    if scenario.topology != Topology::TwoReceiver {
        return Err(Error::config("topology", "key distribution needs `two_receiver`"));
    }
    scenario.validate()?;
    let out = simulate(scenario)?;
    Ok(QkdTags {
        alice: merge_channels(&out.channels[..2]),
        bob: merge_channels(&out.channels[2..]),
        tick_resolution_ps: out.tick_resolution_ps,
        bin_period_ps: out.bin_period_ps,
        duration_s: out.duration_s(),
        stats: out.stats,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QkdReport {
    pub time: SiftedBlock,
    pub phase: SiftedBlock,
    pub key_fraction: f64,
    pub phase_visibility: f64,
    pub threshold: ThresholdCheck,
}

pub fn report(sifted: &SiftResult) -> Result<QkdReport> {
    let cap = |q: f64| q.min(0.5);
    let phase_visibility = sifted.phase.correlation().abs();
    Ok(QkdReport {
        time: sifted.time.clone(),
        phase: sifted.phase.clone(),
        key_fraction: key_fraction(cap(sifted.time.qber), cap(sifted.phase.qber))?,
        phase_visibility,
        threshold: visibility_threshold_check(phase_visibility),
    })
}

/// Writes one byte (0 or 1) per key bit.
pub fn write_key_bits<W: Write>(mut w: W, bits: &[u8]) -> Result<()> {
    w.write_all(bits)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::DetectorConfig;

    fn tag(ps: u64, ch: u8) -> TimeTag {
        TimeTag::new(ps, ch)
    }

    #[test]
    fn empty_input() {
        let r = sift(&[], &[], 1.0, 400.0, 1000.0).unwrap();
        assert_eq!(r.time.pair_count + r.phase.pair_count, 0);
        assert_eq!(r.phase.qber, 0.0);
    }

    #[test]
    fn window_limit() {
        assert!(sift(&[], &[], 1.0, 500.0, 1000.0).is_err());
    }

    #[test]
    fn classification() {
        let alice = [tag(10_000, 0), tag(20_000, 1), tag(30_000, 0)];
        let bob = [tag(10_050, 2), tag(21_000, 3), tag(28_990, 2)];
        let r = sift(&alice, &bob, 1.0, 400.0, 1000.0).unwrap();
        assert_eq!(r.phase.pair_count, 1);
        assert_eq!(r.phase.errors, 0);
        assert_eq!(r.time.pair_count, 2);
        assert_eq!(r.time.errors, 0);
    }

    #[test]
    fn one_to_one() {
        let alice = [tag(10_000, 0), tag(10_010, 0)];
        let bob = [tag(10_005, 2)];
        let r = sift(&alice, &bob, 1.0, 400.0, 1000.0).unwrap();
        assert_eq!(r.phase.pair_count, 1);
        assert_eq!(r.unmatched_alice, 1);
        assert_eq!(r.unmatched_bob, 0);
    }

    #[test]
    fn closest_residual_wins() {
        let alice = [tag(10_000, 0)];
        let bob = [tag(10_150, 3), tag(11_010, 2)];
        let r = sift(&alice, &bob, 1.0, 400.0, 1000.0).unwrap();
        assert_eq!(r.time.pair_count, 1);
    }

    #[test]
    fn key_fraction_examples() {
        assert_eq!(key_fraction(0.0, 0.0).unwrap(), 1.0);
        assert_eq!(key_fraction(0.5, 0.1).unwrap(), 0.0);
        let h = -0.035 * 0.035f64.log2() - 0.965 * 0.965f64.log2();
        assert!((key_fraction(0.035, 0.035).unwrap() - (1.0 - 2.0 * h)).abs() < 1e-12);
        assert!(key_fraction(0.6, 0.0).is_err());
        assert!(key_fraction(0.0, -0.1).is_err());
    }

    #[test]
    fn thresholds() {
        assert_eq!(
            visibility_threshold_check(0.93),
            ThresholdCheck { entangled: true, key_positive: true }
        );
        assert!(!visibility_threshold_check(0.70).entangled);
        let one = visibility_threshold_check(1.0);
        assert!(one.entangled && one.key_positive);
    }

    fn qkd_scenario(v0: f64, delta_sum: f64, seed: u64) -> Scenario {
        let mut s = Scenario {
            topology: Topology::TwoReceiver,
            ..Scenario::default()
        };
        s.run.pulse_count = 40_000_000;
        s.run.mu = 2e-4;
        s.run.seed = seed;
        s.analysis.window_ps = 400.0;
        for (r, delta) in [(&mut s.receivers.alice, delta_sum), (&mut s.receivers.bob, 0.0)] {
            r.mzi.intrinsic_visibility = v0;
            r.mzi.phase_delta = delta;
            for d in &mut r.detectors {
                *d = DetectorConfig { id: d.id, ..DetectorConfig::ideal(0) };
            }
        }
        s
    }

    fn run(s: &Scenario) -> SiftResult {
        let tags = distribute_and_detect(s).unwrap();
        sift(&tags.alice, &tags.bob, tags.tick_resolution_ps, s.analysis.window_ps, tags.bin_period_ps)
            .unwrap()
    }

    #[test]
    fn ideal_bases_are_error_free() {
        for seed in 0..3 {
            let r = run(&qkd_scenario(1.0, 0.0, seed));
            assert!(r.phase.pair_count > 500 && r.time.pair_count > 500);
            assert_eq!(r.phase.errors, 0);
            assert_eq!(r.time.errors, 0);
        }
    }

    #[test]
    fn phase_pi_anticorrelates() {
        let r = run(&qkd_scenario(1.0, std::f64::consts::PI, 4));
        // stray multi-pair matches carry random bits
        assert!(r.phase.qber > 0.995, "{}", r.phase.qber);
    }

    #[test]
    fn qber_from_visibility() {
        let mut s = qkd_scenario(0.93, 0.0, 5);
        s.run.pulse_count = 400_000_000;
        let r = run(&s);
        let q = r.phase.qber;
        assert!((q - 0.035).abs() < 3.0 * r.phase.qber_sigma, "{q} ± {}", r.phase.qber_sigma);
    }

    #[test]
    fn wrong_topology() {
        assert!(distribute_and_detect(&Scenario::default()).is_err());
    }

    #[test]
    fn key_bits_one_byte_each() {
        let mut buf = Vec::new();
        write_key_bits(&mut buf, &[0, 1, 1]).unwrap();
        assert_eq!(buf, vec![0, 1, 1]);
    }
}

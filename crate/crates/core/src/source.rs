//! Pulsed SPDC pair source.
//!
//! Pairs are emitted independently per pump pulse with a Poisson number of
//! pairs of mean `mu`. Pulses without a pair are skipped geometrically, so the
//! cost is proportional to the number of pairs, not the number of pulses.

use std::io::Write;
use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, Geometric, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CENTER_WAVELENGTH_NM;

/// Ratio between the FWHM and the standard deviation of a Gaussian.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_4;

/// Upper bound on `mu` below which multi-pair emission is considered small.
pub const MU_WARN_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumConfig {
    pub center_nm: f64,
    pub fwhm_nm: f64,
    /// Correlation between signal and idler wavelength offsets, in [-1, 0].
    pub correlation: f64,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self {
            center_nm: CENTER_WAVELENGTH_NM,
            fwhm_nm: 3.4,
            correlation: -1.0,
        }
    }
}

impl SpectrumConfig {
    pub fn sigma_nm(&self) -> f64 {
        self.fwhm_nm / FWHM_PER_SIGMA
    }

    pub fn validate(&self, prefix: &str) -> Result<()> {
        if !(self.fwhm_nm > 0.0) {
            return Err(Error::config(format!("{prefix}.fwhm_nm"), "must be > 0"));
        }
        if !(-1.0..=0.0).contains(&self.correlation) {
            return Err(Error::config(
                format!("{prefix}.correlation"),
                "must lie in [-1, 0]",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceConfig {
    pub spectrum: SpectrumConfig,
    /// Pump pulse duration; emission is uniform inside it.
    pub pulse_width_ps: f64,
    /// Per-photon loss between the crystal and the first fiber component.
    pub coupling_loss_db: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            spectrum: SpectrumConfig::default(),
            pulse_width_ps: 150.0,
            coupling_loss_db: 0.0,
        }
    }
}

impl SourceConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        self.spectrum.validate(&format!("{prefix}.spectrum"))?;
        if !(self.pulse_width_ps >= 0.0) {
            return Err(Error::config(format!("{prefix}.pulse_width_ps"), "must be >= 0"));
        }
        if !(self.coupling_loss_db >= 0.0) {
            return Err(Error::config(format!("{prefix}.coupling_loss_db"), "must be >= 0"));
        }
        Ok(())
    }
}

/// One photon of a pair, as it propagates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Photon {
    pub time_ps: f64,
    /// Offset from the center wavelength.
    pub dlambda_nm: f64,
    pub alive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairEvent {
    pub origin_pulse: u64,
    pub emission_time_ps: f64,
    pub pump_phase: f64,
    pub signal: Photon,
    pub idler: Photon,
}

impl PairEvent {
    pub fn dlambda_signal(&self) -> f64 {
        self.signal.dlambda_nm
    }

    pub fn dlambda_idler(&self) -> f64 {
        self.idler.dlambda_nm
    }
}

/// Pulse-train parameters needed to place pairs in time.
#[derive(Debug, Clone, Copy)]
pub struct PulseTrain {
    pub bin_period_ps: f64,
    pub pulse_width_ps: f64,
    /// Pump phase increment between consecutive pulses.
    pub pump_phase_step: f64,
}

impl PulseTrain {
    fn pair_at<R: Rng + ?Sized>(&self, pulse: u64, rng: &mut R) -> PairEvent {
        let t = pulse as f64 * self.bin_period_ps + rng.random::<f64>() * self.pulse_width_ps;
        let photon = Photon {
            time_ps: t,
            dlambda_nm: 0.0,
            alive: true,
        };
        PairEvent {
            origin_pulse: pulse,
            emission_time_ps: t,
            pump_phase: (pulse as f64 * self.pump_phase_step).rem_euclid(std::f64::consts::TAU),
            signal: photon,
            idler: photon,
        }
    }
}

/// Per-pulse event counter: visits every pulse carrying at least one event
/// of a Poisson(mean) process and reports how many events it carries.
fn for_each_poisson_pulse<R: Rng>(
    pulses: Range<u64>,
    mean: f64,
    rng: &mut R,
    mut visit: impl FnMut(u64, u32, &mut R),
) {
    if mean <= 0.0 || pulses.is_empty() {
        return;
    }
    let p_any = -(-mean).exp_m1();
    let skip = Geometric::new(p_any).expect("probability in (0, 1]");
    let mut pulse = pulses.start;
    loop {
        let gap = skip.sample(rng);
        pulse = match pulse.checked_add(gap) {
            Some(p) if p < pulses.end => p,
            _ => break,
        };
        let k = zero_truncated_poisson(mean, p_any, rng);
        visit(pulse, k, rng);
        pulse += 1;
        if pulse >= pulses.end {
            break;
        }
    }
}

/// Poisson(mean) conditioned on being at least 1, by CDF inversion.
fn zero_truncated_poisson(mean: f64, p_any: f64, rng: &mut impl Rng) -> u32 {
    let u = rng.random::<f64>() * p_any;
    let mut k = 1u32;
    let mut pk = mean * (-mean).exp();
    let mut cdf = pk;
    while u > cdf && k < 1000 {
        k += 1;
        pk *= mean / k as f64;
        cdf += pk;
    }
    k
}

fn check_mu(mu: f64) -> Result<()> {
    if !(mu >= 0.0) || mu >= 1.0 {
        return Err(Error::config(
            "mu",
            format!("mean pairs per pulse must lie in [0, 1), got {mu}"),
        ));
    }
    Ok(())
}

/// Emits the pairs of `pulses`, sorted by origin pulse. Wavelength offsets
/// are zero until [`sample_spectrum`] is applied.
pub fn emit_pairs(
    pulses: Range<u64>,
    mu: f64,
    train: &PulseTrain,
    rng: &mut impl Rng,
) -> Result<Vec<PairEvent>> {
    check_mu(mu)?;
    let mut out = Vec::new();
    for_each_poisson_pulse(pulses, mu, rng, |pulse, k, r| {
        for _ in 0..k {
            out.push(train.pair_at(pulse, r));
        }
    });
    Ok(out)
}

/// Like [`emit_pairs`] followed by independent per-photon survival with
/// probabilities `survival = (signal, idler)`, but only materializes pairs
/// with at least one surviving photon. Thinning a Poisson process gives a
/// Poisson process, so this has the same distribution as emitting everything
/// and dropping the dead photons afterwards.
pub fn emit_surviving_pairs(
    pulses: Range<u64>,
    mu: f64,
    survival: (f64, f64),
    train: &PulseTrain,
    spectrum: &SpectrumConfig,
    rng: &mut impl Rng,
) -> Result<Vec<PairEvent>> {
    check_mu(mu)?;
    let (ps, pi) = survival;
    let both = ps * pi;
    let signal_only = ps * (1.0 - pi);
    let idler_only = (1.0 - ps) * pi;
    let any = both + signal_only + idler_only;
    let mut out = Vec::new();
    if any <= 0.0 {
        return Ok(out);
    }
    for_each_poisson_pulse(pulses, mu * any, rng, |pulse, k, r| {
        for _ in 0..k {
            let mut ev = train.pair_at(pulse, r);
            let u = r.random::<f64>() * any;
            if u >= both {
                if u < both + signal_only {
                    ev.idler.alive = false;
                } else {
                    ev.signal.alive = false;
                }
            }
            sample_spectrum(&mut ev, spectrum, r);
            out.push(ev);
        }
    });
    Ok(out)
}

/// Draws correlated wavelength offsets for both photons. The idler offset is
/// `c * signal + sqrt(1 - c^2) * noise`, so both marginals have the
/// configured FWHM for every correlation `c`.
pub fn sample_spectrum<R: Rng + ?Sized>(event: &mut PairEvent, cfg: &SpectrumConfig, rng: &mut R) {
    let sigma = cfg.sigma_nm();
    let zs: f64 = rng.sample(StandardNormal);
    let ds = sigma * zs;
    let c = cfg.correlation;
    let di = if c == -1.0 {
        -ds
    } else {
        let zi: f64 = rng.sample(StandardNormal);
        c * ds + (1.0 - c * c).sqrt() * sigma * zi
    };
    event.signal.dlambda_nm = ds;
    event.idler.dlambda_nm = di;
}

/// Histogram of absolute signal wavelengths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumHistogram {
    pub bin_width_nm: f64,
    /// Bin centers, ascending.
    pub lambda_nm: Vec<f64>,
    pub counts: Vec<u64>,
}

impl SpectrumHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn peak_lambda(&self) -> Option<f64> {
        let (i, _) = self
            .counts
            .iter()
            .enumerate()
            .max_by_key(|(_, c)| **c)?;
        Some(self.lambda_nm[i])
    }

    /// FWHM from linear interpolation at half the maximum.
    pub fn fwhm_nm(&self) -> Option<f64> {
        let ys: Vec<f64> = self.counts.iter().map(|&c| c as f64).collect();
        crate::analysis::peaks::profile_fwhm(&self.lambda_nm, &ys)
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "lambda_nm,count")?;
        for (l, c) in self.lambda_nm.iter().zip(&self.counts) {
            writeln!(w, "{l:.6},{c}")?;
        }
        Ok(())
    }
}

/// Bins signal wavelengths; bins are centered on multiples of `bin_width_nm`
/// away from the center wavelength.
pub fn spectrum_histogram(
    events: &[PairEvent],
    center_nm: f64,
    bin_width_nm: f64,
) -> Result<SpectrumHistogram> {
    if !(bin_width_nm > 0.0) {
        return Err(Error::arg("bin_width_nm must be > 0"));
    }
    if events.is_empty() {
        return Ok(SpectrumHistogram {
            bin_width_nm,
            lambda_nm: Vec::new(),
            counts: Vec::new(),
        });
    }
    let idx: Vec<i64> = events
        .iter()
        .map(|e| (e.dlambda_signal() / bin_width_nm).round() as i64)
        .collect();
    let lo = *idx.iter().min().unwrap();
    let hi = *idx.iter().max().unwrap();
    let mut counts = vec![0u64; (hi - lo + 1) as usize];
    for i in idx {
        counts[(i - lo) as usize] += 1;
    }
    let lambda_nm = (lo..=hi)
        .map(|i| center_nm + i as f64 * bin_width_nm)
        .collect();
    Ok(SpectrumHistogram {
        bin_width_nm,
        lambda_nm,
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_substream;

    fn train() -> PulseTrain {
        PulseTrain {
            bin_period_ps: 1000.0,
            pulse_width_ps: 150.0,
            pump_phase_step: 0.0,
        }
    }

    #[test]
    fn zero_mu_is_empty() {
        let mut rng = rng_substream(1, 0);
        assert!(emit_pairs(0..1_000_000, 0.0, &train(), &mut rng)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn mu_at_or_above_one_is_rejected() {
        let mut rng = rng_substream(1, 0);
        assert!(emit_pairs(0..10, 1.0, &train(), &mut rng).is_err());
        assert!(emit_pairs(0..10, -0.1, &train(), &mut rng).is_err());
    }

    #[test]
    fn pair_count_matches_mean() {
        let mut rng = rng_substream(3, 0);
        let ev = emit_pairs(0..1_000_000, 0.0018, &train(), &mut rng).unwrap();
        let n = ev.len() as f64;
        assert!((n - 1800.0).abs() < 3.0 * 1800f64.sqrt(), "{n}");
        assert!(ev.windows(2).all(|w| w[0].origin_pulse <= w[1].origin_pulse));
        for e in &ev {
            let start = e.origin_pulse as f64 * 1000.0;
            assert!(e.emission_time_ps >= start && e.emission_time_ps <= start + 150.0);
        }
    }

    #[test]
    fn multi_pair_fraction_follows_poisson_tail() {
        let mu = 0.05;
        let pulses = 2_000_000u64;
        let mut rng = rng_substream(4, 0);
        let ev = emit_pairs(0..pulses, mu, &train(), &mut rng).unwrap();
        let mut multi = 0u64;
        let mut i = 0;
        while i < ev.len() {
            let mut j = i;
            while j < ev.len() && ev[j].origin_pulse == ev[i].origin_pulse {
                j += 1;
            }
            if j - i >= 2 {
                multi += 1;
            }
            i = j;
        }
        // Exact tail 1 - e^-mu (1 + mu); ~mu^2/2 for small mu.
        let p2 = 1.0 - (-mu as f64).exp() * (1.0 + mu);
        let expect = p2 * pulses as f64;
        assert!((p2 - mu * mu / 2.0).abs() / p2 < 0.05);
        assert!((multi as f64 - expect).abs() < 4.0 * expect.sqrt(), "{multi} vs {expect}");
    }

    #[test]
    fn per_pulse_counts_are_poisson() {
        // variance / mean of per-pulse counts over 1e6 pulses
        let mu = 0.05;
        let pulses = 1_000_000u64;
        let mut rng = rng_substream(5, 0);
        let ev = emit_pairs(0..pulses, mu, &train(), &mut rng).unwrap();
        let mut hist = std::collections::HashMap::<u64, u64>::new();
        for e in &ev {
            *hist.entry(e.origin_pulse).or_default() += 1;
        }
        let n = pulses as f64;
        let sum: f64 = hist.values().map(|&k| k as f64).sum();
        let sum2: f64 = hist.values().map(|&k| (k * k) as f64).sum();
        let mean = sum / n;
        let var = sum2 / n - mean * mean;
        assert!((var / mean - 1.0).abs() < 0.05, "{}", var / mean);
    }

    #[test]
    fn anticorrelated_offsets() {
        let mut rng = rng_substream(6, 0);
        let mut ev = train().pair_at(0, &mut rng);
        sample_spectrum(&mut ev, &SpectrumConfig::default(), &mut rng);
        assert_eq!(ev.dlambda_idler(), -ev.dlambda_signal());
    }

    fn sampled(n: usize, correlation: f64, seed: u64) -> Vec<PairEvent> {
        let cfg = SpectrumConfig {
            correlation,
            ..SpectrumConfig::default()
        };
        let mut rng = rng_substream(seed, 0);
        (0..n)
            .map(|i| {
                let mut e = train().pair_at(i as u64, &mut rng);
                sample_spectrum(&mut e, &cfg, &mut rng);
                e
            })
            .collect()
    }

    #[test]
    fn spectrum_width_and_mean() {
        let ev = sampled(100_000, -1.0, 7);
        let n = ev.len() as f64;
        let mean = ev.iter().map(|e| e.dlambda_signal()).sum::<f64>() / n;
        let sigma = SpectrumConfig::default().sigma_nm();
        assert!(mean.abs() < 3.0 * sigma / n.sqrt());
        let h = spectrum_histogram(&ev, CENTER_WAVELENGTH_NM, 0.2).unwrap();
        let fwhm = h.fwhm_nm().unwrap();
        assert!((fwhm - 3.4).abs() < 0.1, "{fwhm}");
        assert!((h.peak_lambda().unwrap() - 1554.0).abs() <= 0.3);
    }

    #[test]
    fn marginal_width_independent_of_correlation() {
        for c in [-1.0, -0.5, 0.0] {
            let ev = sampled(200_000, c, 8);
            let n = ev.len() as f64;
            let sd = |f: &dyn Fn(&PairEvent) -> f64| {
                let m = ev.iter().map(f).sum::<f64>() / n;
                (ev.iter().map(|e| (f(e) - m).powi(2)).sum::<f64>() / n).sqrt()
            };
            let s_sig = sd(&|e| e.dlambda_signal()) * FWHM_PER_SIGMA;
            let s_idl = sd(&|e| e.dlambda_idler()) * FWHM_PER_SIGMA;
            assert!((s_sig - 3.4).abs() / 3.4 < 0.01, "signal {s_sig} at c={c}");
            assert!((s_idl - 3.4).abs() / 3.4 < 0.01, "idler {s_idl} at c={c}");
        }
    }

    #[test]
    fn histogram_edge_cases() {
        let h = spectrum_histogram(&[], 1554.0, 0.1).unwrap();
        assert_eq!(h.total(), 0);
        assert!(spectrum_histogram(&[], 1554.0, 0.0).is_err());

        let mut rng = rng_substream(9, 0);
        let mut e = train().pair_at(0, &mut rng);
        e.signal.dlambda_nm = 0.5;
        let h = spectrum_histogram(&[e], 1554.0, 0.1).unwrap();
        assert_eq!(h.counts, vec![1]);
        assert!((h.lambda_nm[0] - 1554.5).abs() < 1e-9);
        let mut csv = Vec::new();
        h.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap(), "lambda_nm,count\n1554.500000,1\n");
    }

    #[test]
    fn histogram_fwhm_round_trip() {
        let ev = sampled(400_000, -1.0, 10);
        let h = spectrum_histogram(&ev, 1554.0, 0.1).unwrap();
        assert_eq!(h.total(), ev.len() as u64);
        let f = h.fwhm_nm().unwrap();
        assert!((f - 3.4).abs() / 3.4 < 0.03, "{f}");
    }

    #[test]
    fn surviving_pairs_match_thinning() {
        let mu = 0.01;
        let pulses = 2_000_000u64;
        let (ps, pi) = (0.3, 0.6);
        let mut rng = rng_substream(11, 0);
        let ev = emit_surviving_pairs(
            0..pulses,
            mu,
            (ps, pi),
            &train(),
            &SpectrumConfig::default(),
            &mut rng,
        )
        .unwrap();
        let n = mu * pulses as f64;
        let both = ev.iter().filter(|e| e.signal.alive && e.idler.alive).count() as f64;
        let sig = ev.iter().filter(|e| e.signal.alive && !e.idler.alive).count() as f64;
        let idl = ev.iter().filter(|e| !e.signal.alive && e.idler.alive).count() as f64;
        for (got, p) in [(both, ps * pi), (sig, ps * (1.0 - pi)), (idl, (1.0 - ps) * pi)] {
            let exp = n * p;
            assert!((got - exp).abs() < 4.0 * exp.sqrt(), "{got} vs {exp}");
        }
    }
}

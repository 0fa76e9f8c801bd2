use rayon::prelude::*;
use serde::Serialize;
use std::io::Write;

use crate::error::{Error, Result};
use crate::model::ensure_sorted_ticks;

/// Histogram of `t_b - t_a` over all pairs within `±max_delay_ps`. Bin `i`
/// is centered on `(i - half_bins) * bin_width_ps`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DelayHistogram {
    pub bin_width_ps: f64,
    pub max_delay_ps: f64,
    pub counts: Vec<u64>,
    pub total_pairs: u64,
}

impl DelayHistogram {
    pub fn empty(bin_width_ps: f64, max_delay_ps: f64) -> Self {
        let half = (max_delay_ps / bin_width_ps).round() as usize;
        Self {
            bin_width_ps,
            max_delay_ps,
            counts: vec![0; 2 * half + 1],
            total_pairs: 0,
        }
    }

    pub fn half_bins(&self) -> usize {
        self.counts.len() / 2
    }

    pub fn delay(&self, i: usize) -> f64 {
        (i as f64 - self.half_bins() as f64) * self.bin_width_ps
    }

    pub fn delays(&self) -> Vec<f64> {
        (0..self.counts.len()).map(|i| self.delay(i)).collect()
    }

    pub fn bin_of(&self, delay_ps: f64) -> usize {
        let k = (delay_ps / self.bin_width_ps).round() as i64;
        let h = self.half_bins() as i64;
        (k.clamp(-h, h) + h) as usize
    }

    /// Sum of bins whose centers fall in `[center - w/2, center + w/2)`.
    pub fn window_count(&self, center_ps: f64, window_ps: f64) -> u64 {
        let lo = center_ps - window_ps / 2.0;
        let hi = center_ps + window_ps / 2.0;
        self.counts
            .iter()
            .enumerate()
            .filter(|&(i, _)| {
                let d = self.delay(i);
                d >= lo && d < hi
            })
            .map(|(_, &c)| c)
            .sum()
    }

    /// Adds the counts of a histogram with the same binning.
    pub fn accumulate(&mut self, other: &DelayHistogram) -> Result<()> {
        if other.counts.len() != self.counts.len() || other.bin_width_ps != self.bin_width_ps {
            return Err(Error::arg("histograms have different binning"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total_pairs += other.total_pairs;
        Ok(())
    }

    /// Reverses the delay axis, as if the streams were swapped.
    pub fn mirrored(&self) -> Self {
        let mut m = self.clone();
        m.counts.reverse();
        m
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "delay_ps,count")?;
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(w, "{},{}", self.delay(i), c)?;
        }
        Ok(())
    }
}

const CHUNK: usize = 1 << 16;

/// All-pairs delay histogram between two sorted tag streams.
pub fn build_delay_histogram(
    a: &[u64],
    b: &[u64],
    tick_resolution_ps: f64,
    bin_width_ps: f64,
    max_delay_ps: f64,
) -> Result<DelayHistogram> {
    if !(bin_width_ps > 0.0) || !(max_delay_ps > 0.0) || !(tick_resolution_ps > 0.0) {
        return Err(Error::arg("bin width, max delay and tick resolution must be positive"));
    }
    ensure_sorted_ticks(a, "a")?;
    ensure_sorted_ticks(b, "b")?;
    let proto = DelayHistogram::empty(bin_width_ps, max_delay_ps);
    let max_ticks = (max_delay_ps / tick_resolution_ps).floor() as u64;
    let bin_ticks = bin_width_ps / tick_resolution_ps;
    let h = proto.half_bins() as i64;
    let partial = |chunk: &[u64]| {
        let mut counts = vec![0u64; proto.counts.len()];
        let mut total = 0u64;
        if chunk.is_empty() {
            return (counts, total);
        }
        let mut lo = b.partition_point(|&t| t < chunk[0].saturating_sub(max_ticks));
        for &ta in chunk {
            let start = ta.saturating_sub(max_ticks);
            while lo < b.len() && b[lo] < start {
                lo += 1;
            }
            let end = ta.saturating_add(max_ticks);
            for &tb in b[lo..].iter().take_while(|&&t| t <= end) {
                let d = tb as i64 - ta as i64;
                let k = (d as f64 / bin_ticks).round() as i64;
                counts[(k.clamp(-h, h) + h) as usize] += 1;
                total += 1;
            }
        }
        (counts, total)
    };
    let parts: Vec<_> = a.par_chunks(CHUNK).map(partial).collect();
    let mut hist = proto;
    for (counts, total) in parts {
        for (acc, c) in hist.counts.iter_mut().zip(counts) {
            *acc += c;
        }
        hist.total_pairs += total;
    }
    Ok(hist)
}

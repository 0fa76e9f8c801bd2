use serde::Serialize;
use std::f64::consts::PI;

use crate::error::{Error, Result};

const MAX_ITER: usize = 200;

/// Least-squares fit of `offset + amplitude * cos(frequency * x + phase)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FringeFit {
    pub offset: f64,
    pub amplitude: f64,
    pub phase: f64,
    pub frequency: f64,
    pub frequency_fixed: bool,
    pub visibility: f64,
    pub offset_err: f64,
    pub amplitude_err: f64,
    pub phase_err: f64,
    pub frequency_err: f64,
    pub visibility_err: f64,
    pub chi2: f64,
    pub dof: usize,
    pub iterations: usize,
    pub converged: bool,
}

impl FringeFit {
    /// A usable fit: converged, positive offset and visibility in `[0, 1]`.
    pub fn is_valid(&self) -> bool {
        self.converged && self.offset > 0.0 && (0.0..=1.0).contains(&self.visibility)
    }

    pub fn eval(&self, x: f64) -> f64 {
        model(&[self.offset, self.amplitude, self.phase, self.frequency], x)
    }

    /// Position of the first maximum at or after zero.
    pub fn max_position(&self) -> f64 {
        let period = 2.0 * PI / self.frequency.abs();
        (-self.phase / self.frequency).rem_euclid(period)
    }
}

fn model(p: &[f64; 4], x: f64) -> f64 {
    p[0] + p[1] * (p[3] * x + p[2]).cos()
}

fn gradient(p: &[f64; 4], x: f64) -> [f64; 4] {
    let arg = p[3] * x + p[2];
    let s = arg.sin();
    [1.0, arg.cos(), -p[1] * s, -p[1] * x * s]
}

fn chi2(p: &[f64; 4], x: &[f64], y: &[f64], w: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .zip(w)
        .map(|((&x, &y), &w)| (y - model(p, x)).powi(2) * w)
        .sum()
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting. Columns
/// with a vanishing pivot are left at zero.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    let scale = (0..n).map(|i| a[i][i].abs()).fold(0.0, f64::max).max(1e-300);
    let mut dead = vec![false; n];
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        if a[piv][c].abs() <= 1e-14 * scale {
            dead[c] = true;
            continue;
        }
        a.swap(c, piv);
        b.swap(c, piv);
        for r in 0..n {
            if r != c {
                let f = a[r][c] / a[c][c];
                if f != 0.0 {
                    for k in c..n {
                        a[r][k] -= f * a[c][k];
                    }
                    b[r] -= f * b[c];
                }
            }
        }
    }
    (0..n)
        .map(|i| if dead[i] { 0.0 } else { b[i] / a[i][i] })
        .collect()
}

fn invert(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut cols = vec![vec![0.0; n]; n];
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let x = solve(a.to_vec(), e);
        for i in 0..n {
            cols[i][j] = x[i];
        }
    }
    cols
}

fn normal_equations(
    p: &[f64; 4],
    free: usize,
    x: &[f64],
    y: &[f64],
    w: &[f64],
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut jtj = vec![vec![0.0; free]; free];
    let mut jtr = vec![0.0; free];
    for ((&x, &y), &w) in x.iter().zip(y).zip(w) {
        let g = gradient(p, x);
        let r = y - model(p, x);
        for i in 0..free {
            jtr[i] += g[i] * r * w;
            for j in 0..free {
                jtj[i][j] += g[i] * g[j] * w;
            }
        }
    }
    (jtj, jtr)
}

fn quadrature_phase(x: &[f64], y: &[f64], offset: f64, freq: f64) -> (f64, f64) {
    let (mut c, mut s) = (0.0, 0.0);
    for (&x, &y) in x.iter().zip(y) {
        c += (y - offset) * (freq * x).cos();
        s += (y - offset) * (freq * x).sin();
    }
    ((-s).atan2(c), (c * c + s * s).sqrt())
}

/// Fits a cosine fringe. `sigma_y` may be empty for unit weights. With
/// `fixed_frequency = None` the frequency is free and seeded from a
/// periodogram scan.
pub fn fit_cosine(
    x: &[f64],
    y: &[f64],
    sigma_y: &[f64],
    fixed_frequency: Option<f64>,
) -> Result<FringeFit> {
    let n = x.len();
    if n < 5 || y.len() != n || !(sigma_y.is_empty() || sigma_y.len() == n) {
        return Err(Error::arg(format!(
            "cosine fit needs at least 5 points with matching lengths, got {n}"
        )));
    }
    let inc = x.windows(2).all(|w| w[1] > w[0]);
    let dec = x.windows(2).all(|w| w[1] < w[0]);
    if !(inc || dec) {
        return Err(Error::arg("x must be strictly monotone"));
    }
    let w: Vec<f64> = if sigma_y.is_empty() {
        vec![1.0; n]
    } else {
        sigma_y
            .iter()
            .map(|&s| if s > 0.0 { 1.0 / (s * s) } else { 1.0 })
            .collect()
    };
    let offset = y.iter().sum::<f64>() / n as f64;
    let (ymin, ymax) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let amplitude = (ymax - ymin) / 2.0;
    let frequency = match fixed_frequency {
        Some(f) => f,
        None => {
            let span = (x[n - 1] - x[0]).abs();
            // between a quarter period and one period per sample spacing
            let (fmin, fmax) = (PI / (2.0 * span), PI * (n - 1) as f64 / span);
            (0..=400)
                .map(|i| fmin + (fmax - fmin) * i as f64 / 400.0)
                .max_by(|&a, &b| {
                    quadrature_phase(x, y, offset, a)
                        .1
                        .total_cmp(&quadrature_phase(x, y, offset, b).1)
                })
                .unwrap()
        }
    };
    let phase = quadrature_phase(x, y, offset, frequency).0;
    let free = if fixed_frequency.is_some() { 3 } else { 4 };

    let mut p = [offset, amplitude, phase, frequency];
    let mut cur = chi2(&p, x, y, &w);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITER {
        iterations += 1;
        let (jtj, jtr) = normal_equations(&p, free, x, y, &w);
        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for (i, row) in a.iter_mut().enumerate() {
                row[i] += lambda * jtj[i][i].max(1e-12);
            }
            let step = solve(a, jtr.clone());
            let mut q = p;
            for i in 0..free {
                q[i] += step[i];
            }
            let next = chi2(&q, x, y, &w);
            if next <= cur {
                let small = step
                    .iter()
                    .zip(&q)
                    .all(|(s, v)| s.abs() <= 1e-12 * (v.abs() + 1e-9));
                let rel = (cur - next) / cur.max(1e-300);
                p = q;
                cur = next;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                if small || rel < 1e-15 || cur < 1e-24 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // no downhill step left: the minimum is reached to precision
            converged = true;
        }
        if converged {
            break;
        }
    }

    if p[1] < 0.0 {
        p[1] = -p[1];
        p[2] += PI;
    }
    p[2] = (p[2] + PI).rem_euclid(2.0 * PI) - PI;
    let (jtj, _) = normal_equations(&p, free, x, y, &w);
    let cov = invert(&jtj);
    let err = |i: usize| {
        if i < free && cov[i][i] > 0.0 {
            cov[i][i].sqrt()
        } else if i < free && jtj[i][i] == 0.0 {
            f64::NAN
        } else {
            0.0
        }
    };
    let visibility = if p[0] != 0.0 { p[1] / p[0] } else { f64::NAN };
    let var_v = (cov[1][1] / (p[0] * p[0])) + (p[1] * p[1] * cov[0][0] / p[0].powi(4))
        - 2.0 * p[1] * cov[0][1] / p[0].powi(3);
    Ok(FringeFit {
        offset: p[0],
        amplitude: p[1],
        phase: p[2],
        frequency: p[3],
        frequency_fixed: fixed_frequency.is_some(),
        visibility,
        offset_err: err(0),
        amplitude_err: err(1),
        phase_err: err(2),
        frequency_err: err(3),
        visibility_err: var_v.max(0.0).sqrt(),
        chi2: cur,
        dof: n.saturating_sub(free),
        iterations,
        converged,
    })
}

//! Digital Butterworth bandpass design and causal IIR filtering.
//!
//! Design path: analog low-pass prototype poles, low-pass to bandpass
//! transform at pre-warped edges, bilinear transform, then expansion of the
//! zero/pole/gain form into transfer-function polynomials with `a[0] = 1`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandpassSpec {
    pub lowcut_hz: f64,
    pub highcut_hz: f64,
    pub order: usize,
    pub sampling_hz: f64,
}

impl BandpassSpec {
    /// 5-15 Hz, order 2.
    pub fn qrs_default(sampling_hz: f64) -> Self {
        BandpassSpec {
            lowcut_hz: 5.0,
            highcut_hz: 15.0,
            order: 2,
            sampling_hz,
        }
    }

    pub fn nyquist_hz(&self) -> f64 {
        0.5 * self.sampling_hz
    }

    /// Band edges as fractions of the Nyquist frequency.
    pub fn normalized_cutoffs(&self) -> (f64, f64) {
        let nyq = self.nyquist_hz();
        (self.lowcut_hz / nyq, self.highcut_hz / nyq)
    }

    pub fn validate(&self) -> Result<()> {
        if self.order == 0 {
            return Err(Error::domain("filter order must be at least 1"));
        }
        if !(self.sampling_hz.is_finite() && self.sampling_hz > 0.0) {
            return Err(Error::domain(format!("invalid sampling rate {}", self.sampling_hz)));
        }
        let nyq = self.nyquist_hz();
        if !(self.lowcut_hz > 0.0 && self.lowcut_hz < self.highcut_hz && self.highcut_hz < nyq) {
            return Err(Error::domain(format!(
                "need 0 < lowcut < highcut < nyquist, got lowcut={} highcut={} nyquist={nyq}",
                self.lowcut_hz, self.highcut_hz
            )));
        }
        Ok(())
    }
}

/// Transfer function `B(z)/A(z)` with `a[0] = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IirCoefficients {
    pub b: Vec<f64>,
    pub a: Vec<f64>,
}

impl IirCoefficients {
    /// `H(e^{jω})` for `ω` in radians per sample.
    pub fn response(&self, omega: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -omega);
        let eval = |c: &[f64]| {
            c.iter()
                .rev()
                .fold(Complex64::new(0.0, 0.0), |acc, &ci| acc * z_inv + ci)
        };
        eval(&self.b) / eval(&self.a)
    }

    pub fn magnitude_at(&self, freq_hz: f64, sampling_hz: f64) -> f64 {
        self.response(2.0 * PI * freq_hz / sampling_hz).norm()
    }

    /// Roots of `A(z)`, found with Durand-Kerner iteration.
    pub fn poles(&self) -> Vec<Complex64> {
        poly_roots(&self.a)
    }

    pub fn is_stable(&self) -> bool {
        self.poles().iter().all(|p| p.norm() < 1.0)
    }
}

pub fn design_bandpass(spec: &BandpassSpec) -> Result<IirCoefficients> {
    spec.validate()?;
    let n = spec.order;
    let (low, high) = spec.normalized_cutoffs();

    // Pre-warp on a sampling rate of 2 (cutoffs normalized to Nyquist).
    let fs = 2.0;
    let w_low = 2.0 * fs * (PI * low / fs).tan();
    let w_high = 2.0 * fs * (PI * high / fs).tan();
    let bw = w_high - w_low;
    let w0 = (w_low * w_high).sqrt();

    // Analog prototype: n poles on the left half of the unit circle, no zeros, unit gain.
    let proto: Vec<Complex64> = (0..n)
        .map(|k| {
            let m = -(n as f64) + 1.0 + 2.0 * k as f64;
            -Complex64::from_polar(1.0, PI * m / (2.0 * n as f64))
        })
        .collect();

    // Low-pass to bandpass: each pole splits in two, n zeros land at s = 0.
    let mut poles = Vec::with_capacity(2 * n);
    for p in &proto {
        let half = p * (bw / 2.0);
        let disc = (half * half - w0 * w0).sqrt();
        poles.push(half + disc);
        poles.push(half - disc);
    }
    let zeros = vec![Complex64::new(0.0, 0.0); n];
    let gain = bw.powi(n as i32);

    // Bilinear transform; the n zeros at infinity map to z = -1.
    let fs2 = Complex64::new(2.0 * fs, 0.0);
    let bilinear = |s: &Complex64| (fs2 + s) / (fs2 - s);
    let zd: Vec<Complex64> = zeros
        .iter()
        .map(bilinear)
        .chain(std::iter::repeat_n(Complex64::new(-1.0, 0.0), n))
        .collect();
    let pd: Vec<Complex64> = poles.iter().map(bilinear).collect();
    let num: Complex64 = zeros.iter().map(|z| fs2 - z).product();
    let den: Complex64 = poles.iter().map(|p| fs2 - p).product();
    let kd = gain * (num / den).re;

    let b = poly_from_roots(&zd).into_iter().map(|c| kd * c.re).collect();
    let a = poly_from_roots(&pd).into_iter().map(|c| c.re).collect();
    Ok(IirCoefficients { b, a })
}

/// Monic polynomial with the given roots, highest power first.
fn poly_from_roots(roots: &[Complex64]) -> Vec<Complex64> {
    let mut c = vec![Complex64::new(1.0, 0.0)];
    for r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); c.len() + 1];
        for (i, ci) in c.iter().enumerate() {
            next[i] += ci;
            next[i + 1] -= ci * r;
        }
        c = next;
    }
    c
}

fn poly_roots(coeffs: &[f64]) -> Vec<Complex64> {
    let lead = coeffs[0];
    let c: Vec<f64> = coeffs.iter().map(|x| x / lead).collect();
    let deg = c.len() - 1;
    if deg == 0 {
        return Vec::new();
    }
    let eval = |z: Complex64| c.iter().fold(Complex64::new(0.0, 0.0), |acc, &ci| acc * z + ci);
    let seed = Complex64::new(0.4, 0.9);
    let mut roots: Vec<Complex64> = (0..deg).map(|k| seed.powu(k as u32)).collect();
    for _ in 0..500 {
        let mut delta = 0.0f64;
        for i in 0..deg {
            let mut denom = Complex64::new(1.0, 0.0);
            for j in 0..deg {
                if i != j {
                    denom *= roots[i] - roots[j];
                }
            }
            let step = eval(roots[i]) / denom;
            roots[i] -= step;
            delta = delta.max(step.norm());
        }
        if delta < 1e-14 {
            break;
        }
    }
    roots
}

/// Causal direct-form II transposed filter with zero initial state.
pub fn apply_filter(coeffs: &IirCoefficients, x: &[f64]) -> Result<Vec<f64>> {
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::data(format!("non-finite input sample at index {i}")));
    }
    let a0 = coeffs.a[0];
    let b: Vec<f64> = coeffs.b.iter().map(|v| v / a0).collect();
    let a: Vec<f64> = coeffs.a.iter().map(|v| v / a0).collect();
    let order = b.len().max(a.len());
    let coef = |c: &[f64], i: usize| c.get(i).copied().unwrap_or(0.0);

    let mut state = vec![0.0; order];
    let mut y = Vec::with_capacity(x.len());
    for &xn in x {
        let yn = coef(&b, 0) * xn + state[0];
        for i in 1..order {
            let next = if i < order - 1 { state[i] } else { 0.0 };
            state[i - 1] = coef(&b, i) * xn - coef(&a, i) * yn + next;
        }
        y.push(yn);
    }
    Ok(y)
}

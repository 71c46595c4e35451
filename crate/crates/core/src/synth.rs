//! Synthetic ECG-like signals for tests, fixtures and demos.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::record::{ArrhythmiaClass, EcgRecord, N_LEADS};

/// Gaussian pulses on a zero baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseTrain {
    pub sampling_hz: f64,
    pub n_samples: usize,
    pub bpm: f64,
    /// Time of the first pulse center, seconds.
    pub first_pulse_s: f64,
    pub sigma_s: f64,
    pub amplitude_mv: f64,
}

impl PulseTrain {
    pub fn new(sampling_hz: f64, duration_s: f64, bpm: f64) -> Self {
        PulseTrain {
            sampling_hz,
            n_samples: (sampling_hz * duration_s).round() as usize,
            bpm,
            first_pulse_s: 0.5,
            sigma_s: 0.010,
            amplitude_mv: 1.0,
        }
    }

    /// Sample index of every pulse center that fits in the record with a
    /// full 5-sigma margin.
    pub fn centers(&self) -> Vec<usize> {
        let period = 60.0 / self.bpm;
        let margin = 5.0 * self.sigma_s;
        let duration = self.n_samples as f64 / self.sampling_hz;
        let mut out = Vec::new();
        let mut t = self.first_pulse_s;
        while t + margin < duration {
            out.push((t * self.sampling_hz).round() as usize);
            t += period;
        }
        out
    }

    pub fn signal(&self) -> Vec<f64> {
        let sigma = self.sigma_s * self.sampling_hz;
        let reach = (6.0 * sigma).ceil() as isize;
        let mut x = vec![0.0; self.n_samples];
        for c in self.centers() {
            let c = c as isize;
            for i in (c - reach).max(0)..(c + reach + 1).min(self.n_samples as isize) {
                let d = (i - c) as f64 / sigma;
                x[i as usize] += self.amplitude_mv * (-0.5 * d * d).exp();
            }
        }
        x
    }
}

/// Adds zero-mean white Gaussian noise with standard deviation `std_mv`.
pub fn add_white_noise(x: &mut [f64], std_mv: f64, seed: u64) {
    if std_mv <= 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, std_mv).expect("positive std");
    for v in x {
        *v += normal.sample(&mut rng);
    }
}

/// Twelve copies of a pulse train with lead-dependent amplitude and polarity.
pub fn pulse_record(id: &str, train: &PulseTrain, noise_std_mv: f64, seed: u64) -> Result<EcgRecord> {
    let base = train.signal();
    let leads = (0..N_LEADS)
        .map(|k| {
            let scale = [1.0, 1.2, 0.4, -0.8, 0.5, 0.7, -0.6, 0.3, 0.9, 1.4, 1.1, 0.8][k];
            let mut lead: Vec<f64> = base.iter().map(|v| v * scale).collect();
            add_white_noise(&mut lead, noise_std_mv, seed.wrapping_add(k as u64));
            lead
        })
        .collect();
    EcgRecord::new(id, train.sampling_hz, leads, None)
}

/// Per-lead sinusoids whose frequency depends on the class; used as an
/// easily separable toy classification set.
pub fn sinusoid_record(
    id: &str,
    class: ArrhythmiaClass,
    sampling_hz: f64,
    n_samples: usize,
    phase: f64,
) -> Result<EcgRecord> {
    let freq = 2.0 + 3.0 * class.index() as f64;
    let leads = (0..N_LEADS)
        .map(|k| {
            let amp = 0.5 + 0.05 * k as f64;
            (0..n_samples)
                .map(|i| {
                    let t = i as f64 / sampling_hz;
                    amp * (2.0 * std::f64::consts::PI * freq * t + phase + 0.3 * k as f64).sin()
                })
                .collect()
        })
        .collect();
    EcgRecord::new(id, sampling_hz, leads, Some(class))
}

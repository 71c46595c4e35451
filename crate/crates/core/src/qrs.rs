//! Simplified Pan-Tompkins QRS detection.
//!
//! Bandpass (5-15 Hz) → first difference → square → moving-window
//! integration → min-max normalization → peak picking on the energy
//! envelope, then refinement of each candidate to the raw-signal maximum
//! and a Q/S trough search on either side of it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{apply_filter, design_bandpass, BandpassSpec};
use crate::record::{EcgRecord, LeadId, QrsAnnotation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub bandpass: BandpassSpec,
    /// Length of the ones-kernel used for integration. The default of 5
    /// samples is much shorter than the ~150 ms window of the classical
    /// detector; raise it (e.g. 75 at 500 Hz) for that behaviour.
    pub integration_window: usize,
    pub peak_min_distance: usize,
    pub peak_min_height: f64,
    pub peak_min_width: f64,
    pub refine_halfwidth: usize,
    pub qs_window: usize,
}

impl DetectorConfig {
    pub fn for_sampling_rate(sampling_hz: f64) -> Self {
        let fifth = ((sampling_hz / 5.0).floor() as usize).max(1);
        DetectorConfig {
            bandpass: BandpassSpec::qrs_default(sampling_hz),
            integration_window: 5,
            peak_min_distance: fifth,
            peak_min_height: 0.5,
            peak_min_width: 0.5,
            refine_halfwidth: fifth,
            qs_window: ((sampling_hz / 4.0).floor() as usize).max(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.integration_window == 0 {
            return Err(Error::domain("integration window must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.peak_min_height) {
            return Err(Error::domain(format!(
                "peak height threshold {} outside [0, 1]",
                self.peak_min_height
            )));
        }
        if self.peak_min_distance == 0 || self.refine_halfwidth == 0 || self.qs_window == 0 {
            return Err(Error::domain("detector windows must be >= 1"));
        }
        self.bandpass.validate()
    }
}

/// Energy envelope of `signal`, normalized to [0, 1]. Output length is `n - 1`.
pub fn enhance(signal: &[f64], cfg: &DetectorConfig) -> Result<Vec<f64>> {
    let w = cfg.integration_window;
    if w == 0 {
        return Err(Error::domain("integration window must be >= 1"));
    }
    if signal.len() < w + 2 {
        return Err(Error::domain(format!(
            "signal of {} samples is too short for integration window {w}",
            signal.len()
        )));
    }
    let squared: Vec<f64> = signal.windows(2).map(|p| (p[1] - p[0]).powi(2)).collect();
    let mut integrated = moving_sum_same(&squared, w);
    min_max_normalize(&mut integrated);
    Ok(integrated)
}

/// Convolution with a ones-kernel of length `w`, centered ("same" mode).
fn moving_sum_same(x: &[f64], w: usize) -> Vec<f64> {
    let n = x.len();
    let shift = (w - 1) / 2;
    (0..n)
        .map(|i| {
            let hi = (i + shift).min(n - 1);
            let lo = (i + shift).saturating_sub(w - 1);
            if lo > hi {
                0.0
            } else {
                x[lo..=hi].iter().sum()
            }
        })
        .collect()
}

fn min_max_normalize(x: &mut [f64]) {
    let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let span = hi - lo;
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN span lands here too
    if !(span > 0.0) {
        x.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    x.iter_mut().for_each(|v| *v = (*v - lo) / span);
}

/// Local maxima of `x`; a flat top reports its leftmost sample. Endpoints
/// and plateaus touching the last sample are never maxima.
pub fn local_maxima(x: &[f64]) -> Vec<usize> {
    let n = x.len();
    let mut peaks = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if x[i - 1] < x[i] {
            let mut ahead = i + 1;
            while ahead + 1 < n && x[ahead] == x[i] {
                ahead += 1;
            }
            if x[ahead] < x[i] {
                peaks.push(i);
                i = ahead;
                continue;
            }
        }
        i += 1;
    }
    peaks
}

/// Topographic prominence of the peak at `peak` plus the bases it was measured from.
pub fn prominence(x: &[f64], peak: usize) -> (f64, usize, usize) {
    let top = x[peak];

    let mut left_min = top;
    let mut left_base = peak;
    let mut i = peak as isize;
    while i >= 0 && x[i as usize] <= top {
        if x[i as usize] < left_min {
            left_min = x[i as usize];
            left_base = i as usize;
        }
        i -= 1;
    }

    let mut right_min = top;
    let mut right_base = peak;
    let mut j = peak;
    while j < x.len() && x[j] <= top {
        if x[j] < right_min {
            right_min = x[j];
            right_base = j;
        }
        j += 1;
    }

    (top - left_min.max(right_min), left_base, right_base)
}

/// Width of the peak at half its prominence, with linear interpolation
/// between samples at the crossings.
pub fn width_at_half_prominence(x: &[f64], peak: usize) -> f64 {
    let (prom, left_base, right_base) = prominence(x, peak);
    let level = x[peak] - prom / 2.0;

    let mut i = peak;
    while left_base < i && x[i] > level {
        i -= 1;
    }
    let mut left = i as f64;
    if x[i] < level {
        left += (level - x[i]) / (x[i + 1] - x[i]);
    }

    let mut j = peak;
    while j < right_base && x[j] > level {
        j += 1;
    }
    let mut right = j as f64;
    if x[j] < level {
        right -= (level - x[j]) / (x[j - 1] - x[j]);
    }

    right - left
}

/// Candidate peaks: local maxima passing the height and width thresholds,
/// thinned to `peak_min_distance` by accepting the highest first (lower
/// index wins ties). Returned in ascending order.
pub fn find_peaks(x: &[f64], cfg: &DetectorConfig) -> Vec<usize> {
    let mut candidates: Vec<usize> = local_maxima(x)
        .into_iter()
        .filter(|&i| x[i] >= cfg.peak_min_height)
        .filter(|&i| width_at_half_prominence(x, i) >= cfg.peak_min_width)
        .collect();
    if cfg.peak_min_distance <= 1 {
        return candidates;
    }

    candidates.sort_by(|&a, &b| x[b].total_cmp(&x[a]).then(a.cmp(&b)));
    // `accepted_sorted` stays ordered so each distance check is a binary search.
    let mut accepted_sorted: Vec<usize> = Vec::with_capacity(candidates.len());
    for c in candidates {
        let pos = accepted_sorted.partition_point(|&p| p < c);
        let too_close = |p: usize| p.abs_diff(c) < cfg.peak_min_distance;
        let blocked = (pos > 0 && too_close(accepted_sorted[pos - 1]))
            || (pos < accepted_sorted.len() && too_close(accepted_sorted[pos]));
        if !blocked {
            accepted_sorted.insert(pos, c);
        }
    }
    accepted_sorted
}

fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate().skip(1) {
        if v > x[best] {
            best = i;
        }
    }
    best
}

fn argmin(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate().skip(1) {
        if v < x[best] {
            best = i;
        }
    }
    best
}

/// Runs the full detector on a raw sample sequence.
pub fn detect_qrs_signal(signal: &[f64], lead: LeadId, cfg: &DetectorConfig) -> Result<QrsAnnotation> {
    cfg.validate()?;
    let n = signal.len();
    if n < cfg.integration_window + 2 {
        return Err(Error::domain(format!(
            "lead {lead} has {n} samples, too short for the detector"
        )));
    }
    let coeffs = design_bandpass(&cfg.bandpass)?;
    let filtered = apply_filter(&coeffs, signal)?;
    let envelope = enhance(&filtered, cfg)?;
    let candidates = find_peaks(&envelope, cfg);

    let mut r_peaks: Vec<usize> = candidates
        .iter()
        .map(|&c| {
            let lo = c.saturating_sub(cfg.refine_halfwidth);
            let hi = (c + cfg.refine_halfwidth).min(n - 1);
            lo + argmax(&signal[lo..=hi])
        })
        .collect();
    r_peaks.sort_unstable();
    r_peaks.dedup();

    let mut ann = QrsAnnotation::empty(lead);
    for r in r_peaks {
        // Beats at the very edges have no room for a Q or S search.
        if r == 0 || r + 1 >= n {
            continue;
        }
        let q_lo = r.saturating_sub(cfg.qs_window);
        let q = q_lo + argmin(&signal[q_lo..r]);
        let s_hi = (r + cfg.qs_window).min(n - 1);
        let s = r + 1 + argmin(&signal[r + 1..=s_hi]);
        ann.r_peaks.push(r);
        ann.q_peaks.push(q);
        ann.s_peaks.push(s);
    }
    Ok(ann)
}

pub fn detect_qrs(record: &EcgRecord, lead: LeadId, cfg: &DetectorConfig) -> Result<QrsAnnotation> {
    detect_qrs_signal(record.lead(lead), lead, cfg)
}

/// Rhythm summary derived from an annotation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QrsFeatures {
    pub beat_count: f64,
    pub mean_rr_s: f64,
    pub std_rr_s: f64,
    pub mean_qrs_width_s: f64,
    pub std_qrs_width_s: f64,
    pub heart_rate_bpm: f64,
}

impl QrsFeatures {
    pub const LEN: usize = 6;

    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.beat_count,
            self.mean_rr_s,
            self.std_rr_s,
            self.mean_qrs_width_s,
            self.std_qrs_width_s,
            self.heart_rate_bpm,
        ]
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// All zeros when fewer than two beats are present. Standard deviations
/// are population (divide by n) values.
pub fn qrs_features(ann: &QrsAnnotation, sampling_hz: f64) -> QrsFeatures {
    if ann.r_peaks.len() < 2 {
        return QrsFeatures::default();
    }
    let rr = ann.r_peaks.windows(2).map(|w| (w[1] - w[0]) as f64 / sampling_hz);
    let (mean_rr_s, std_rr_s) = mean_std(rr);
    let widths = ann
        .q_peaks
        .iter()
        .zip(&ann.s_peaks)
        .map(|(&q, &s)| (s - q) as f64 / sampling_hz);
    let (mean_qrs_width_s, std_qrs_width_s) = mean_std(widths);
    QrsFeatures {
        beat_count: ann.r_peaks.len() as f64,
        mean_rr_s,
        std_rr_s,
        mean_qrs_width_s,
        std_qrs_width_s,
        heart_rate_bpm: 60.0 / mean_rr_s,
    }
}

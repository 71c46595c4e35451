#![allow(dead_code)]

pub mod grad;

use ecg_arrhythmia::nn::model::Example;
use ecg_arrhythmia::pipeline::signal_input;
use ecg_arrhythmia::synth::sinusoid_record;
use ecg_arrhythmia::ArrhythmiaClass;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
/// Magnitudes below this are compared absolutely.
pub const FD_FLOOR: f64 = 1e-6;
pub const FD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

/// Central differences of scalar `f` at `x`.
pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + FD_STEP;
            let up = f(&probe);
            probe[i] = orig - FD_STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Largest elementwise relative error.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `n` sinusoid examples cycling through the five classes, each with its
/// own phase.
pub fn toy_set(n: usize, sampling_hz: f64, len: usize) -> Vec<Example> {
    (0..n)
        .map(|i| {
            let class = ArrhythmiaClass::from_index(i % 5).unwrap();
            let rec = sinusoid_record(&format!("toy{i}"), class, sampling_hz, len, 0.37 * i as f64).unwrap();
            Example {
                input: signal_input(&rec, len),
                aux: vec![],
                label: class.index(),
            }
        })
        .collect()
}

/// Squared magnitude of the analog Butterworth bandpass prototype after
/// bilinear pre-warping, evaluated at digital frequency `omega` (rad/sample).
pub fn butterworth_bandpass_mag2(omega: f64, low_norm: f64, high_norm: f64, order: i32) -> f64 {
    use std::f64::consts::PI;
    let warp = |w: f64| 4.0 * (PI * w / 2.0).tan();
    let (w1, w2) = (warp(low_norm), warp(high_norm));
    let w0sq = w1 * w2;
    let bw = w2 - w1;
    let big = 4.0 * (omega / 2.0).tan();
    let ratio = (big * big - w0sq) / (big * bw);
    1.0 / (1.0 + ratio.powi(2 * order))
}

/// Straightforward peak picking: every step written as the plain definition
/// with full scans, for comparison against the optimized detector.
pub fn brute_find_peaks(x: &[f64], min_height: f64, min_width: f64, min_distance: usize) -> Vec<usize> {
    let n = x.len();
    let mut maxima = vec![];
    for i in 1..n.saturating_sub(1) {
        if x[i - 1] >= x[i] {
            continue;
        }
        // extent of the flat run starting at i
        let mut j = i;
        while j + 1 < n && x[j + 1] == x[i] {
            j += 1;
        }
        if j + 1 < n && x[j + 1] < x[i] {
            maxima.push(i);
        }
    }

    let prominence = |p: usize| -> (f64, usize, usize) {
        // nearest strictly higher sample on each side bounds the search
        let left_stop = (0..p).rev().find(|&k| x[k] > x[p]).map_or(0, |k| k + 1);
        let right_stop = (p + 1..n).find(|&k| x[k] > x[p]).map_or(n - 1, |k| k - 1);
        let mut lb = p;
        for k in (left_stop..=p).rev() {
            if x[k] < x[lb] {
                lb = k;
            }
        }
        let mut rb = p;
        for k in p..=right_stop {
            if x[k] < x[rb] {
                rb = k;
            }
        }
        (x[p] - x[lb].max(x[rb]), lb, rb)
    };

    let width = |p: usize| -> f64 {
        let (prom, lb, rb) = prominence(p);
        let level = x[p] - prom / 2.0;
        let li = (lb..=p).rev().find(|&k| x[k] <= level).unwrap_or(lb);
        let left = if x[li] < level {
            li as f64 + (level - x[li]) / (x[li + 1] - x[li])
        } else {
            li as f64
        };
        let ri = (p..=rb).find(|&k| x[k] <= level).unwrap_or(rb);
        let right = if x[ri] < level {
            ri as f64 - (level - x[ri]) / (x[ri - 1] - x[ri])
        } else {
            ri as f64
        };
        right - left
    };

    let mut cands: Vec<usize> = maxima
        .into_iter()
        .filter(|&p| x[p] >= min_height && width(p) >= min_width)
        .collect();
    if min_distance <= 1 {
        return cands;
    }
    // greedy by height, earlier index first among equals
    cands.sort_by(|&a, &b| x[b].partial_cmp(&x[a]).unwrap().then(a.cmp(&b)));
    let mut kept: Vec<usize> = vec![];
    for c in cands {
        if kept.iter().all(|&k| k.abs_diff(c) >= min_distance) {
            kept.push(c);
        }
    }
    kept.sort_unstable();
    kept
}

/// Matches detections to true beats one-to-one within `tol` samples.
/// Returns (true positives, false positives, worst localization error).
pub fn match_beats(truth: &[usize], found: &[usize], tol: usize) -> (usize, usize, usize) {
    let mut used = vec![false; found.len()];
    let mut tp = 0;
    let mut worst = 0;
    for &t in truth {
        let best = found
            .iter()
            .enumerate()
            .filter(|(i, &f)| !used[*i] && f.abs_diff(t) <= tol)
            .min_by_key(|(_, &f)| f.abs_diff(t));
        if let Some((i, &f)) = best {
            used[i] = true;
            tp += 1;
            worst = worst.max(f.abs_diff(t));
        }
    }
    (tp, found.len() - tp, worst)
}

/// Random test sequence: integer-valued half the time so that ties and
/// plateaus are common.
pub fn random_sequence(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rng.gen_range(0..=200);
    if rng.gen_bool(0.5) {
        let levels = rng.gen_range(2..6);
        (0..n)
            .map(|_| rng.gen_range(0..levels) as f64 / (levels - 1) as f64)
            .collect()
    } else {
        (0..n).map(|_| rng.gen::<f64>()).collect()
    }
}

use ecg_arrhythmia::dataset::{DatasetManifest, ManifestEntry, Split, SplitSpec};

/// Entries with the given active per-class counts plus `excluded` flagged
/// extras of class AF.
pub fn manifest_entries(counts: [usize; 5], excluded: usize) -> Vec<ManifestEntry> {
    let mut out = vec![];
    for (c, &n) in counts.iter().enumerate() {
        let class = ArrhythmiaClass::from_index(c).unwrap();
        for i in 0..n {
            out.push(ManifestEntry::new(format!("{}{:05}", class.code(), i), class));
        }
    }
    for i in 0..excluded {
        let mut e = ManifestEntry::new(format!("X{i:05}"), ArrhythmiaClass::Af);
        e.excluded = true;
        out.push(e);
    }
    out
}

/// Balances and splits, then checks every manifest invariant. Returns the
/// final manifest on success.
pub fn build_and_check(counts: [usize; 5], excluded: usize, spec: SplitSpec) -> Result<DatasetManifest, String> {
    let entries = manifest_entries(counts, excluded);
    let mut m = DatasetManifest::new(entries.clone(), spec.seed);
    m.balance().map_err(|e| e.to_string())?;
    m.split(spec).map_err(|e| e.to_string())?;

    let min = *counts.iter().min().unwrap();
    let active: Vec<&ManifestEntry> = m.entries.iter().filter(|e| !e.excluded).collect();
    if m.counts_after.values().any(|&v| v != min) {
        return Err(format!("unbalanced: {:?}", m.counts_after));
    }
    if m.entries.iter().filter(|e| e.excluded).count() != excluded {
        return Err("excluded entries lost".into());
    }
    // every retained entry came from the input
    let ids: std::collections::BTreeSet<&str> = entries.iter().map(|e| e.record_id.as_str()).collect();
    if m.entries.iter().any(|e| !ids.contains(e.record_id.as_str())) {
        return Err("unknown id after balance".into());
    }
    // partition: each active entry is test xor exactly one fold
    for e in &active {
        match (e.split, e.fold) {
            (Some(Split::Test), None) => {}
            (Some(Split::TrainVal), Some(f)) if f < spec.n_folds => {}
            other => return Err(format!("{}: bad assignment {other:?}", e.record_id)),
        }
    }
    let n = active.len();
    let n_test = m.test_entries().count();
    let want_test = (spec.test_fraction * n as f64).round_ties_even() as usize;
    if n_test != want_test {
        return Err(format!("{n_test} test entries, expected {want_test}"));
    }
    let fold_total: usize = (0..spec.n_folds).map(|k| m.fold_entries(k).count()).sum();
    if fold_total + n_test != n {
        return Err("folds and test do not cover the active entries".into());
    }
    let spread = |v: &[usize]| v.iter().max().unwrap() - v.iter().min().unwrap();
    for class in ArrhythmiaClass::ALL {
        let per_fold: Vec<usize> = (0..spec.n_folds)
            .map(|k| m.fold_entries(k).filter(|e| e.class == class).count())
            .collect();
        if spread(&per_fold) > 1 {
            return Err(format!("{class}: fold sizes {per_fold:?}"));
        }
    }
    let per_class_test: Vec<usize> = ArrhythmiaClass::ALL
        .iter()
        .map(|&c| m.test_entries().filter(|e| e.class == c).count())
        .collect();
    if spread(&per_class_test) > 1 {
        return Err(format!("test counts {per_class_test:?}"));
    }
    // determinism
    let mut again = DatasetManifest::new(entries, spec.seed);
    again.balance().map_err(|e| e.to_string())?;
    again.split(spec).map_err(|e| e.to_string())?;
    if again != m {
        return Err("not deterministic".into());
    }
    Ok(m)
}

use ecg_arrhythmia::metrics::{metrics, ConfusionMatrix};
use num_rational::Ratio;

fn to_f64(r: Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Exact per-class precision/recall/F1 from label counts, F1 taken as the
/// harmonic mean of precision and recall. 0/0 is 0.
pub fn rational_metrics(cm: &[Vec<u64>]) -> (Ratio<u64>, Vec<[Ratio<u64>; 3]>) {
    let k = cm.len();
    let zero = Ratio::from_integer(0);
    let total: u64 = cm.iter().flatten().sum();
    let trace: u64 = (0..k).map(|i| cm[i][i]).sum();
    let acc = if total == 0 { zero } else { Ratio::new(trace, total) };
    let per = (0..k)
        .map(|c| {
            let tp = cm[c][c];
            let predicted: u64 = (0..k).map(|t| cm[t][c]).sum();
            let actual: u64 = cm[c].iter().sum();
            let p = if predicted == 0 {
                zero
            } else {
                Ratio::new(tp, predicted)
            };
            let r = if actual == 0 { zero } else { Ratio::new(tp, actual) };
            let f = if p + r == zero {
                zero
            } else {
                Ratio::from_integer(2) * p * r / (p + r)
            };
            [p, r, f]
        })
        .collect();
    (acc, per)
}

/// Compares `metrics()` against the rational oracle; per-class values and
/// accuracy must agree exactly.
pub fn check_metrics(counts: Vec<Vec<u64>>) -> Result<(), String> {
    let report = metrics(&ConfusionMatrix { counts: counts.clone() });
    let (acc, per) = rational_metrics(&counts);
    if report.accuracy != to_f64(acc) {
        return Err(format!("accuracy {} vs {acc}", report.accuracy));
    }
    let trace: u64 = (0..counts.len()).map(|i| counts[i][i]).sum();
    let total: u64 = counts.iter().flatten().sum();
    if total > 0 && acc * Ratio::from_integer(total) != Ratio::from_integer(trace) {
        return Err("accuracy * total != trace".into());
    }
    for (c, [p, r, f]) in per.iter().enumerate() {
        let got = (report.precision[c], report.recall[c], report.f1[c]);
        if got != (to_f64(*p), to_f64(*r), to_f64(*f)) {
            return Err(format!("class {c}: {got:?} vs ({p}, {r}, {f})"));
        }
        if report.f1[c] > 1.0 || report.f1[c] > 2.0 * report.precision[c].min(report.recall[c]) + 1e-15 {
            return Err(format!("class {c}: f1 bound violated"));
        }
    }
    let exact_macro: Ratio<u64> = per.iter().map(|v| v[2]).sum::<Ratio<u64>>() / Ratio::from_integer(per.len() as u64);
    if (report.macro_f1 - to_f64(exact_macro)).abs() > 1e-15 {
        return Err(format!("macro f1 {} vs {exact_macro}", report.macro_f1));
    }
    Ok(())
}

pub fn random_confusion(rng: &mut ChaCha8Rng) -> Vec<Vec<u64>> {
    let k = rng.gen_range(2..=5);
    let sparsity = rng.gen_range(0.0..0.8);
    (0..k)
        .map(|_| {
            (0..k)
                .map(|_| {
                    if rng.gen_bool(sparsity) {
                        0
                    } else {
                        rng.gen_range(0..40)
                    }
                })
                .collect()
        })
        .collect()
}

use ecg_arrhythmia::synth::{pulse_record, PulseTrain};
use ecg_arrhythmia::EcgRecord;

/// The three rasterizer fixtures: name and record.
pub fn raster_fixtures() -> Vec<(&'static str, EcgRecord)> {
    vec![
        (
            "zeros",
            EcgRecord::new("zeros", 500.0, vec![vec![0.0; 5000]; 12], None).unwrap(),
        ),
        (
            "pulses",
            pulse_record("pulses", &PulseTrain::new(500.0, 10.0, 75.0), 0.0, 0).unwrap(),
        ),
        (
            "sinusoids",
            sinusoid_record("sinusoids", ArrhythmiaClass::STach, 500.0, 5000, 0.25).unwrap(),
        ),
    ]
}

pub fn golden_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

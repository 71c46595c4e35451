//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each export has a plain-Rust counterpart so the logic is testable
//! natively; the bindings only marshal arguments and results.

use ecg_arrhythmia::filter::{apply_filter, design_bandpass, BandpassSpec};
use ecg_arrhythmia::qrs::{detect_qrs, DetectorConfig};
use ecg_arrhythmia::raster::{rasterize, RasterConfig};
use ecg_arrhythmia::synth::{pulse_record, PulseTrain};
use ecg_arrhythmia::{EcgRecord, LeadId, Result};
use serde::Serialize;
use wasm_bindgen::prelude::*;

pub const DEMO_FS: f64 = 500.0;
pub const DEMO_SECONDS: f64 = 10.0;

#[derive(Debug, Serialize)]
pub struct Response {
    pub hz: Vec<f64>,
    pub db: Vec<f64>,
    pub b: Vec<f64>,
    pub a: Vec<f64>,
    pub stable: bool,
}

pub fn response(fs: f64, low: f64, high: f64, order: usize, points: usize) -> Result<Response> {
    let spec = BandpassSpec {
        lowcut_hz: low,
        highcut_hz: high,
        order,
        sampling_hz: fs,
    };
    let c = design_bandpass(&spec)?;
    let points = points.max(2);
    let hz: Vec<f64> = (0..points)
        .map(|i| spec.nyquist_hz() * i as f64 / (points - 1) as f64)
        .collect();
    let db = hz.iter().map(|&f| 20.0 * c.magnitude_at(f, fs).log10()).collect();
    Ok(Response {
        hz,
        db,
        stable: c.is_stable(),
        b: c.b,
        a: c.a,
    })
}

pub fn synthetic_record(bpm: f64, noise_mv: f64, seed: u64) -> Result<(PulseTrain, EcgRecord)> {
    let train = PulseTrain::new(DEMO_FS, DEMO_SECONDS, bpm);
    let rec = pulse_record("demo", &train, noise_mv, seed)?;
    Ok((train, rec))
}

#[derive(Debug, Serialize)]
pub struct Detection {
    pub fs: f64,
    pub signal: Vec<f64>,
    pub filtered: Vec<f64>,
    pub truth: Vec<usize>,
    pub r_peaks: Vec<usize>,
    pub q_peaks: Vec<usize>,
    pub s_peaks: Vec<usize>,
}

pub fn detection(bpm: f64, noise_mv: f64, seed: u64) -> Result<Detection> {
    let (train, rec) = synthetic_record(bpm, noise_mv, seed)?;
    let cfg = DetectorConfig::for_sampling_rate(DEMO_FS);
    let ann = detect_qrs(&rec, LeadId::II, &cfg)?;
    let signal = rec.lead(LeadId::II).to_vec();
    let coeffs = design_bandpass(&cfg.bandpass)?;
    let filtered = apply_filter(&coeffs, &signal)?;
    Ok(Detection {
        fs: DEMO_FS,
        signal,
        filtered,
        truth: train.centers(),
        r_peaks: ann.r_peaks,
        q_peaks: ann.q_peaks,
        s_peaks: ann.s_peaks,
    })
}

/// Grayscale raster expanded to RGBA for a canvas `ImageData`.
pub fn raster_rgba(bpm: f64, noise_mv: f64, seed: u64) -> Result<(usize, usize, Vec<u8>)> {
    let (_, rec) = synthetic_record(bpm, noise_mv, seed)?;
    let img = rasterize(&rec, &RasterConfig::default())?;
    let rgba = img.pixels.iter().flat_map(|&p| [p, p, p, 255]).collect();
    Ok((img.width, img.height, rgba))
}

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> std::result::Result<String, JsValue> {
    serde_json::to_string(v).map_err(js_err)
}

/// Bandpass magnitude response as JSON `{hz, db, b, a, stable}`.
#[wasm_bindgen(js_name = filterResponse)]
pub fn filter_response(fs: f64, low: f64, high: f64, order: u32, points: u32) -> std::result::Result<String, JsValue> {
    to_json(&response(fs, low, high, order as usize, points as usize).map_err(js_err)?)
}

/// QRS detection on lead II of a synthetic pulse train, as JSON.
#[wasm_bindgen(js_name = detectSynthetic)]
pub fn detect_synthetic(bpm: f64, noise_mv: f64, seed: u32) -> std::result::Result<String, JsValue> {
    to_json(&detection(bpm, noise_mv, seed as u64).map_err(js_err)?)
}

#[wasm_bindgen]
pub struct Raster {
    width: usize,
    height: usize,
    rgba: Vec<u8>,
}

#[wasm_bindgen]
impl Raster {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> u32 {
        self.width as u32
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> u32 {
        self.height as u32
    }

    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }
}

/// 12-lead raster of a synthetic pulse train.
#[wasm_bindgen(js_name = rasterizeSynthetic)]
pub fn rasterize_synthetic(bpm: f64, noise_mv: f64, seed: u32) -> std::result::Result<Raster, JsValue> {
    let (width, height, rgba) = raster_rgba(bpm, noise_mv, seed as u64).map_err(js_err)?;
    Ok(Raster { width, height, rgba })
}

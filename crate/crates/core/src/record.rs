//! ECG record types and the native on-disk format.
//!
//! A native record is a pair of files sharing a stem: `<id>.json` holds the
//! header and `<id>.raw` holds `12 * n_samples` little-endian `i16` values,
//! lead-major (all of lead I, then lead II, ...). Stored integers are
//! `round_half_even(mV * gain)`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_LEADS: usize = 12;

/// Gain used when a record comes from a source without one (CSV import).
pub const DEFAULT_GAIN: f64 = 1000.0;

pub const LEAD_NAMES: [&str; N_LEADS] = [
    "I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6",
];

/// One of the 12 standard leads, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LeadId(u8);

impl LeadId {
    pub const I: LeadId = LeadId(0);
    pub const II: LeadId = LeadId(1);

    pub fn from_index(index: usize) -> Option<Self> {
        (index < N_LEADS).then_some(LeadId(index as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        LEAD_NAMES[self.index()]
    }

    pub fn all() -> impl Iterator<Item = LeadId> {
        (0..N_LEADS as u8).map(LeadId)
    }
}

impl fmt::Display for LeadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LeadId {
    type Err = Error;

    /// Exact match first, then a case-insensitive one (`avr` -> `aVR`).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        LEAD_NAMES
            .iter()
            .position(|n| *n == s)
            .or_else(|| LEAD_NAMES.iter().position(|n| n.eq_ignore_ascii_case(s)))
            .map(|i| LeadId(i as u8))
            .ok_or_else(|| Error::format(format!("unknown lead name {s:?}")))
    }
}

/// The five rhythm classes, in the fixed order used by confusion matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ArrhythmiaClass {
    #[serde(rename = "AF")]
    Af,
    #[serde(rename = "IAVB")]
    Iavb,
    #[serde(rename = "SB")]
    Sb,
    #[serde(rename = "SNR", alias = "NSR")]
    Snr,
    #[serde(rename = "STach")]
    STach,
}

impl ArrhythmiaClass {
    pub const ALL: [ArrhythmiaClass; 5] = [
        ArrhythmiaClass::Af,
        ArrhythmiaClass::Iavb,
        ArrhythmiaClass::Sb,
        ArrhythmiaClass::Snr,
        ArrhythmiaClass::STach,
    ];
    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn code(self) -> &'static str {
        match self {
            ArrhythmiaClass::Af => "AF",
            ArrhythmiaClass::Iavb => "IAVB",
            ArrhythmiaClass::Sb => "SB",
            ArrhythmiaClass::Snr => "SNR",
            ArrhythmiaClass::STach => "STach",
        }
    }
}

impl fmt::Display for ArrhythmiaClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for ArrhythmiaClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("NSR") {
            return Ok(ArrhythmiaClass::Snr);
        }
        Self::ALL
            .into_iter()
            .find(|c| c.code().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::format(format!("unknown arrhythmia class {s:?}")))
    }
}

/// A labeled 12-lead recording in millivolts.
#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    record_id: String,
    sampling_hz: f64,
    gain: f64,
    leads: Vec<Vec<f64>>,
    label: Option<ArrhythmiaClass>,
}

impl EcgRecord {
    pub fn new(
        record_id: impl Into<String>,
        sampling_hz: f64,
        leads: Vec<Vec<f64>>,
        label: Option<ArrhythmiaClass>,
    ) -> Result<Self> {
        Self::with_gain(record_id, sampling_hz, DEFAULT_GAIN, leads, label)
    }

    pub fn with_gain(
        record_id: impl Into<String>,
        sampling_hz: f64,
        gain: f64,
        leads: Vec<Vec<f64>>,
        label: Option<ArrhythmiaClass>,
    ) -> Result<Self> {
        if !(sampling_hz.is_finite() && sampling_hz > 0.0) {
            return Err(Error::format(format!(
                "sampling_hz must be positive, got {sampling_hz}"
            )));
        }
        if !(gain.is_finite() && gain > 0.0) {
            return Err(Error::format(format!("gain must be positive, got {gain}")));
        }
        if leads.len() != N_LEADS {
            return Err(Error::format(format!("expected {N_LEADS} leads, got {}", leads.len())));
        }
        let n = leads[0].len();
        if n < 2 {
            return Err(Error::format(format!("record needs at least 2 samples, got {n}")));
        }
        for (i, lead) in leads.iter().enumerate() {
            if lead.len() != n {
                return Err(Error::format(format!(
                    "lead {} has {} samples, expected {n}",
                    LEAD_NAMES[i],
                    lead.len()
                )));
            }
            if let Some(j) = lead.iter().position(|v| !v.is_finite()) {
                return Err(Error::data(format!(
                    "non-finite sample in lead {} at index {j}",
                    LEAD_NAMES[i]
                )));
            }
        }
        Ok(EcgRecord {
            record_id: record_id.into(),
            sampling_hz,
            gain,
            leads,
            label,
        })
    }

    pub fn record_id(&self) -> &str {
        &self.record_id
    }

    pub fn sampling_hz(&self) -> f64 {
        self.sampling_hz
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn n_samples(&self) -> usize {
        self.leads[0].len()
    }

    pub fn label(&self) -> Option<ArrhythmiaClass> {
        self.label
    }

    pub fn lead(&self, lead: LeadId) -> &[f64] {
        &self.leads[lead.index()]
    }

    pub fn leads(&self) -> &[Vec<f64>] {
        &self.leads
    }
}

/// R/Q/S sample indices for one lead.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QrsAnnotation {
    #[serde(with = "lead_serde")]
    pub lead: LeadId,
    pub r_peaks: Vec<usize>,
    pub q_peaks: Vec<usize>,
    pub s_peaks: Vec<usize>,
}

impl QrsAnnotation {
    pub fn empty(lead: LeadId) -> Self {
        QrsAnnotation {
            lead,
            r_peaks: Vec::new(),
            q_peaks: Vec::new(),
            s_peaks: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.r_peaks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r_peaks.is_empty()
    }

    /// Checks the ordering invariants against a record length.
    pub fn validate(&self, n_samples: usize) -> Result<()> {
        let n = self.r_peaks.len();
        if self.q_peaks.len() != n || self.s_peaks.len() != n {
            return Err(Error::data("q/r/s peak lists differ in length"));
        }
        for i in 0..n {
            let (q, r, s) = (self.q_peaks[i], self.r_peaks[i], self.s_peaks[i]);
            if !(q < r && r < s && s < n_samples) {
                return Err(Error::data(format!("beat {i}: q={q} r={r} s={s} out of order")));
            }
            if i > 0 && self.r_peaks[i - 1] >= r {
                return Err(Error::data(format!("r_peaks not strictly increasing at {i}")));
            }
        }
        Ok(())
    }
}

mod lead_serde {
    use super::LeadId;
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(lead: &LeadId, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(lead.name())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<LeadId, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(D::Error::custom)
    }
}

/// JSON header of a native record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordHeader {
    pub record_id: String,
    pub sampling_hz: f64,
    pub n_samples: usize,
    /// ADC units per millivolt.
    pub gain: f64,
    pub lead_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<ArrhythmiaClass>,
}

/// Resolves `<stem>`, `<stem>.json` or `<stem>.raw` to the (header, payload) pair.
pub fn record_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("raw") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let mut header = stem.clone().into_os_string();
    header.push(".json");
    let mut raw = stem.into_os_string();
    raw.push(".raw");
    (header.into(), raw.into())
}

pub fn read_header(path: &Path) -> Result<RecordHeader> {
    let (header_path, _) = record_paths(path);
    let text = fs::read_to_string(&header_path).map_err(|e| Error::io(&header_path, e))?;
    let header: RecordHeader =
        serde_json::from_str(&text).map_err(|e| Error::format(format!("{}: {e}", header_path.display())))?;
    check_header(&header)?;
    Ok(header)
}

fn check_header(h: &RecordHeader) -> Result<()> {
    if h.lead_names.len() != N_LEADS {
        return Err(Error::format(format!(
            "header lists {} lead names, expected {N_LEADS}",
            h.lead_names.len()
        )));
    }
    for (i, name) in h.lead_names.iter().enumerate() {
        if name != LEAD_NAMES[i] {
            return Err(Error::format(format!(
                "lead {i} is named {name:?}, expected {:?}",
                LEAD_NAMES[i]
            )));
        }
    }
    if h.n_samples < 2 {
        return Err(Error::format(format!("n_samples must be >= 2, got {}", h.n_samples)));
    }
    if !(h.sampling_hz.is_finite() && h.sampling_hz > 0.0) {
        return Err(Error::format(format!("invalid sampling_hz {}", h.sampling_hz)));
    }
    if !(h.gain.is_finite() && h.gain > 0.0) {
        return Err(Error::format(format!("invalid gain {}", h.gain)));
    }
    Ok(())
}

pub fn read_record(path: &Path) -> Result<EcgRecord> {
    let header = read_header(path)?;
    let (_, raw_path) = record_paths(path);
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let expected = N_LEADS * header.n_samples;
    if bytes.len() % 2 != 0 || bytes.len() / 2 != expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len() / 2,
        });
    }
    let leads = bytes
        .chunks_exact(2 * header.n_samples)
        .map(|lead| {
            lead.chunks_exact(2)
                .map(|b| f64::from(i16::from_le_bytes([b[0], b[1]])) / header.gain)
                .collect()
        })
        .collect();
    EcgRecord::with_gain(header.record_id, header.sampling_hz, header.gain, leads, header.label)
}

/// Quantizes one millivolt value to the stored integer.
pub fn quantize(mv: f64, gain: f64) -> Result<i16> {
    let v = (mv * gain).round_ties_even();
    if !v.is_finite() || v < f64::from(i16::MIN) || v > f64::from(i16::MAX) {
        return Err(Error::data(format!("sample {mv} mV does not fit int16 at gain {gain}")));
    }
    Ok(v as i16)
}

pub fn write_record(record: &EcgRecord, path: &Path) -> Result<()> {
    let gain = record.gain;
    let mut payload = Vec::with_capacity(2 * N_LEADS * record.n_samples());
    for (i, lead) in record.leads.iter().enumerate() {
        for (j, &v) in lead.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::data(format!(
                    "non-finite sample in lead {} at index {j}",
                    LEAD_NAMES[i]
                )));
            }
            payload.extend_from_slice(&quantize(v, gain)?.to_le_bytes());
        }
    }
    let header = RecordHeader {
        record_id: record.record_id.clone(),
        sampling_hz: record.sampling_hz,
        n_samples: record.n_samples(),
        gain,
        lead_names: LEAD_NAMES.iter().map(|s| s.to_string()).collect(),
        label: record.label,
    };
    let (header_path, raw_path) = record_paths(path);
    let json = serde_json::to_string_pretty(&header).expect("header serializes");
    fs::write(&header_path, json).map_err(|e| Error::io(&header_path, e))?;
    fs::write(&raw_path, payload).map_err(|e| Error::io(&raw_path, e))?;
    Ok(())
}

/// Imports a CSV with a header row of lead names (any column order) and one
/// row per sample, values in millivolts. The record id is the file stem.
pub fn import_csv(path: &Path, sampling_hz: f64, label: Option<ArrhythmiaClass>) -> Result<EcgRecord> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?
        .clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(Error::format(format!("{}: empty CSV", path.display())));
    }

    let mut column_of_lead = [usize::MAX; N_LEADS];
    for (col, name) in headers.iter().enumerate() {
        let lead: LeadId = name.parse()?;
        if column_of_lead[lead.index()] != usize::MAX {
            return Err(Error::format(format!("duplicate lead column {name:?}")));
        }
        column_of_lead[lead.index()] = col;
    }
    if let Some(missing) = column_of_lead.iter().position(|&c| c == usize::MAX) {
        return Err(Error::format(format!("missing lead column {}", LEAD_NAMES[missing])));
    }

    let mut leads = vec![Vec::new(); N_LEADS];
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
        for (lead, &col) in column_of_lead.iter().enumerate() {
            let cell = rec.get(col).unwrap_or("");
            let v: f64 = cell.parse().map_err(|_| {
                Error::data(format!(
                    "row {}: non-numeric value {cell:?} in column {}",
                    row + 2,
                    LEAD_NAMES[lead]
                ))
            })?;
            leads[lead].push(v);
        }
    }
    if leads[0].len() < 2 {
        return Err(Error::format(format!(
            "{}: need at least 2 data rows, found {}",
            path.display(),
            leads[0].len()
        )));
    }
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("record")
        .to_string();
    EcgRecord::new(id, sampling_hz, leads, label)
}

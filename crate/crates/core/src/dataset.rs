//! Balanced dataset construction, stratified train/test split and k-fold
//! assignment.
//!
//! All randomness comes from a ChaCha8 stream seeded with the manifest seed
//! and consumed by [`shuffle`], a plain Fisher-Yates pass that draws indices
//! with rejection sampling on `next_u64`. Classes are always visited in the
//! fixed order AF, IAVB, SB, SNR, STach, so a manifest is a pure function of
//! its inputs and seed.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::{read_header, ArrhythmiaClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    TrainVal,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub record_id: String,
    pub class: ArrhythmiaClass,
    #[serde(default)]
    pub source_corpus: String,
    /// Record location relative to the data directory, without extension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default)]
    pub excluded: bool,
    #[serde(default)]
    pub split: Option<Split>,
    #[serde(default)]
    pub fold: Option<usize>,
}

impl ManifestEntry {
    pub fn new(record_id: impl Into<String>, class: ArrhythmiaClass) -> Self {
        ManifestEntry {
            record_id: record_id.into(),
            class,
            source_corpus: String::new(),
            path: None,
            excluded: false,
            split: None,
            fold: None,
        }
    }

    pub fn is_active(&self) -> bool {
        !self.excluded
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub n_folds: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            test_fraction: 0.20,
            n_folds: 10,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::domain(format!(
                "test fraction must be in (0, 1), got {}",
                self.test_fraction
            )));
        }
        if self.n_folds < 2 {
            return Err(Error::domain(format!("need at least 2 folds, got {}", self.n_folds)));
        }
        Ok(())
    }
}

pub type ClassCounts = BTreeMap<ArrhythmiaClass, usize>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    #[serde(default)]
    pub counts_before: ClassCounts,
    #[serde(default)]
    pub counts_after: ClassCounts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_spec: Option<SplitSpec>,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>, seed: u64) -> Self {
        let counts = active_counts(&entries);
        DatasetManifest {
            seed,
            counts_before: counts.clone(),
            counts_after: counts,
            split_spec: None,
            entries,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn exclude(&mut self, ids: &[String]) -> Result<()> {
        self.entries = exclude_noisy(std::mem::take(&mut self.entries), ids)?;
        self.counts_before = active_counts(&self.entries);
        self.counts_after = self.counts_before.clone();
        Ok(())
    }

    pub fn balance(&mut self) -> Result<()> {
        self.counts_before = active_counts(&self.entries);
        self.entries = balance(std::mem::take(&mut self.entries), self.seed)?;
        self.counts_after = active_counts(&self.entries);
        Ok(())
    }

    pub fn split(&mut self, spec: SplitSpec) -> Result<()> {
        self.entries = split(std::mem::take(&mut self.entries), &spec)?;
        self.split_spec = Some(spec);
        Ok(())
    }

    pub fn test_entries(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries
            .iter()
            .filter(|e| e.is_active() && e.split == Some(Split::Test))
    }

    pub fn fold_entries(&self, fold: usize) -> impl Iterator<Item = &ManifestEntry> {
        self.entries
            .iter()
            .filter(move |e| e.is_active() && e.split == Some(Split::TrainVal) && e.fold == Some(fold))
    }

    /// Train/val entries outside `fold`.
    pub fn training_entries(&self, fold: usize) -> impl Iterator<Item = &ManifestEntry> {
        self.entries
            .iter()
            .filter(move |e| e.is_active() && e.split == Some(Split::TrainVal) && e.fold.is_some_and(|f| f != fold))
    }

    pub fn n_folds(&self) -> usize {
        self.entries.iter().filter_map(|e| e.fold).max().map_or(0, |m| m + 1)
    }
}

pub fn active_counts(entries: &[ManifestEntry]) -> ClassCounts {
    let mut counts: ClassCounts = ArrhythmiaClass::ALL.iter().map(|&c| (c, 0)).collect();
    for e in entries.iter().filter(|e| e.is_active()) {
        *counts.entry(e.class).or_default() += 1;
    }
    counts
}

fn uniform_below(rng: &mut ChaCha8Rng, bound: u64) -> u64 {
    // Reject the tail so every residue is equally likely.
    let zone = u64::MAX - (u64::MAX % bound);
    loop {
        let v = rng.next_u64();
        if v < zone {
            return v % bound;
        }
    }
}

/// Fisher-Yates shuffle, walking from the end.
pub fn shuffle<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = uniform_below(rng, i as u64 + 1) as usize;
        items.swap(i, j);
    }
}

fn active_indices_by_class(entries: &[ManifestEntry]) -> BTreeMap<ArrhythmiaClass, Vec<usize>> {
    let mut by_class: BTreeMap<ArrhythmiaClass, Vec<usize>> =
        ArrhythmiaClass::ALL.iter().map(|&c| (c, Vec::new())).collect();
    for (i, e) in entries.iter().enumerate().filter(|(_, e)| e.is_active()) {
        by_class.entry(e.class).or_default().push(i);
    }
    by_class
}

/// Keeps `min` active entries per class, chosen by a seeded shuffle within
/// each class. Surplus entries are dropped; excluded entries are kept as-is.
pub fn balance(entries: Vec<ManifestEntry>, seed: u64) -> Result<Vec<ManifestEntry>> {
    let by_class = active_indices_by_class(&entries);
    if let Some((class, _)) = by_class.iter().find(|(_, v)| v.is_empty()) {
        return Err(Error::domain(format!("class {class} has no usable records")));
    }
    let m = by_class.values().map(Vec::len).min().unwrap_or(0);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; entries.len()];
    for idx in by_class.values() {
        let mut idx = idx.clone();
        shuffle(&mut idx, &mut rng);
        for &i in &idx[..m] {
            keep[i] = true;
        }
    }
    Ok(entries
        .into_iter()
        .zip(keep)
        .filter(|(e, k)| *k || e.excluded)
        .map(|(e, _)| e)
        .collect())
}

/// Stratified split. The total test count is `round_half_even(f * N)`,
/// spread over classes so per-class test counts differ by at most one
/// (earlier classes take the remainder). Train/val entries are dealt into
/// folds with one counter running across all classes, so both per-class and
/// overall fold sizes differ by at most one.
pub fn split(entries: Vec<ManifestEntry>, spec: &SplitSpec) -> Result<Vec<ManifestEntry>> {
    spec.validate()?;
    let by_class = active_indices_by_class(&entries);
    let sizes: BTreeSet<usize> = by_class.values().map(Vec::len).collect();
    if sizes.len() > 1 {
        return Err(Error::domain("entries must be balanced before splitting"));
    }
    let m = sizes.into_iter().next().unwrap_or(0);
    if m < spec.n_folds {
        return Err(Error::domain(format!(
            "{m} entries per class is fewer than {} folds",
            spec.n_folds
        )));
    }
    let k = by_class.len();
    let total = m * k;
    let total_test = (spec.test_fraction * total as f64).round_ties_even() as usize;
    let (base, extra) = (total_test / k, total_test % k);
    if base + usize::from(extra > 0) >= m {
        return Err(Error::domain("test fraction leaves no training entries"));
    }

    let mut entries = entries;
    for e in entries.iter_mut() {
        e.split = None;
        e.fold = None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut dealer = 0usize;
    for (ci, idx) in by_class.values().enumerate() {
        let mut idx = idx.clone();
        shuffle(&mut idx, &mut rng);
        let n_test = base + usize::from(ci < extra);
        for &i in &idx[..n_test] {
            entries[i].split = Some(Split::Test);
        }
        for &i in &idx[n_test..] {
            entries[i].split = Some(Split::TrainVal);
            entries[i].fold = Some(dealer % spec.n_folds);
            dealer += 1;
        }
    }
    Ok(entries)
}

/// Marks the listed records as excluded. Every id must exist.
pub fn exclude_noisy(mut entries: Vec<ManifestEntry>, record_ids: &[String]) -> Result<Vec<ManifestEntry>> {
    let known: BTreeSet<&str> = entries.iter().map(|e| e.record_id.as_str()).collect();
    let unknown: Vec<String> = record_ids
        .iter()
        .filter(|id| !known.contains(id.as_str()))
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if !unknown.is_empty() {
        return Err(Error::UnknownIds(unknown));
    }
    let wanted: BTreeSet<&str> = record_ids.iter().map(String::as_str).collect();
    for e in entries.iter_mut() {
        if wanted.contains(e.record_id.as_str()) {
            e.excluded = true;
            e.split = None;
            e.fold = None;
        }
    }
    Ok(entries)
}

/// Manifest entries for every labelled record under `dir`, found by
/// recursive search for `<stem>.json` headers with a matching `.raw`
/// payload. The corpus name is the first directory level below `dir`.
/// Entries come out sorted by path.
pub fn scan_directory(dir: &Path) -> Result<Vec<ManifestEntry>> {
    fn walk(dir: &Path, out: &mut Vec<std::path::PathBuf>) -> Result<()> {
        let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in rd {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                walk(&path, out)?;
            } else if path.extension().is_some_and(|e| e == "json") && path.with_extension("raw").is_file() {
                out.push(path);
            }
        }
        Ok(())
    }
    let mut headers = Vec::new();
    walk(dir, &mut headers)?;
    headers.sort();
    let mut seen = BTreeSet::new();
    let mut entries = Vec::with_capacity(headers.len());
    for path in headers {
        let header = read_header(&path)?;
        let label = header
            .label
            .ok_or_else(|| Error::data(format!("{}: record has no label", path.display())))?;
        if !seen.insert(header.record_id.clone()) {
            return Err(Error::data(format!("duplicate record id {}", header.record_id)));
        }
        let rel = path.strip_prefix(dir).expect("walked below dir").with_extension("");
        let mut parts = rel.components();
        let corpus = if rel.components().count() > 1 {
            parts
                .next()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .unwrap_or_default()
        } else {
            String::new()
        };
        let mut e = ManifestEntry::new(header.record_id, label);
        e.source_corpus = corpus;
        e.path = Some(rel.to_string_lossy().replace('\\', "/"));
        entries.push(e);
    }
    Ok(entries)
}

/// Reads an exclusion list: one id per line, `#` comments and blanks ignored.
pub fn read_id_list(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

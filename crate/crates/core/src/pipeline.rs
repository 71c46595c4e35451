//! Glue between records, manifests and models: input preparation, example
//! loading, fold-wise cross-validation and test-split evaluation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::metrics::{aggregate, confusion_indices, metrics, AggregateReport, MetricsReport};
use crate::nn::model::{ArchSpec, Example, ModelState};
use crate::nn::train::{train, History, TrainConfig};
use crate::qrs::{detect_qrs, qrs_features, DetectorConfig, QrsFeatures};
use crate::raster::{rasterize, RasterConfig};
use crate::record::{read_record, ArrhythmiaClass, EcgRecord, LeadId};

/// Fixed scales bringing the QRS feature vector to roughly unit range:
/// beats/10, RR mean and std in s, QRS width mean and std in units of 100 ms,
/// heart rate/100.
pub const QRS_FEATURE_SCALE: [f64; QrsFeatures::LEN] = [0.1, 1.0, 1.0, 10.0, 10.0, 0.01];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputConfig {
    /// Append lead-II QRS features to the pre-head activations.
    pub with_qrs_features: bool,
    pub qrs_lead: String,
}

impl Default for InputConfig {
    fn default() -> Self {
        InputConfig {
            with_qrs_features: false,
            qrs_lead: LeadId::II.name().to_string(),
        }
    }
}

impl InputConfig {
    pub fn aux_len(&self) -> usize {
        if self.with_qrs_features {
            QrsFeatures::LEN
        } else {
            0
        }
    }

    fn lead(&self) -> Result<LeadId> {
        self.qrs_lead
            .parse()
            .map_err(|_| Error::domain(format!("unknown lead {:?}", self.qrs_lead)))
    }
}

/// Zero-mean, unit-variance copy (population variance). Constant input maps
/// to zeros.
pub fn zscore(x: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if sd == 0.0 || !sd.is_finite() {
        return vec![0.0; x.len()];
    }
    x.iter().map(|v| (v - mean) / sd).collect()
}

/// `[12, len]` input: each lead z-scored, then truncated or zero-padded.
pub fn signal_input(record: &EcgRecord, len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(record.leads().len() * len);
    for lead in record.leads() {
        let z = zscore(lead);
        let take = z.len().min(len);
        out.extend_from_slice(&z[..take]);
        out.resize(out.len() + (len - take), 0.0);
    }
    out
}

/// `[1, H, W]` input from the raster image; trace pixels map to 1, background to 0.
pub fn image_input(record: &EcgRecord, height: usize, width: usize) -> Result<Vec<f64>> {
    let cfg = RasterConfig {
        width,
        height,
        ..RasterConfig::default()
    };
    let img = rasterize(record, &cfg)?;
    Ok(img.pixels.iter().map(|&p| f64::from(255 - p) / 255.0).collect())
}

pub fn aux_features(record: &EcgRecord, cfg: &InputConfig) -> Result<Vec<f64>> {
    if !cfg.with_qrs_features {
        return Ok(Vec::new());
    }
    let det = DetectorConfig::for_sampling_rate(record.sampling_hz());
    let ann = detect_qrs(record, cfg.lead()?, &det)?;
    let f = qrs_features(&ann, record.sampling_hz()).to_vec();
    Ok(f.iter().zip(QRS_FEATURE_SCALE).map(|(v, s)| v * s).collect())
}

/// Builds the model input for one record. `label` defaults to the record's
/// own label and must be present.
pub fn record_example(
    record: &EcgRecord,
    arch: &ArchSpec,
    cfg: &InputConfig,
    label: Option<ArrhythmiaClass>,
) -> Result<Example> {
    if record.leads().len() != arch.in_channels && !arch.kind.is_image() {
        return Err(Error::domain(format!(
            "{}: {} leads, architecture expects {}",
            record.record_id(),
            record.leads().len(),
            arch.in_channels
        )));
    }
    let label = label
        .or(record.label())
        .ok_or_else(|| Error::data(format!("{}: record has no label", record.record_id())))?;
    let input = if arch.kind.is_image() {
        image_input(record, arch.input_height, arch.input_len)?
    } else {
        signal_input(record, arch.input_len)
    };
    Ok(Example {
        input,
        aux: aux_features(record, cfg)?,
        label: label.index(),
    })
}

/// Resolves manifest entries to record files under a data directory.
#[derive(Debug, Clone)]
pub struct DataSource {
    pub data_dir: PathBuf,
}

impl DataSource {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        DataSource {
            data_dir: data_dir.into(),
        }
    }

    pub fn path_of(&self, entry: &ManifestEntry) -> PathBuf {
        self.data_dir.join(entry.path.as_deref().unwrap_or(&entry.record_id))
    }

    pub fn load(&self, entry: &ManifestEntry) -> Result<EcgRecord> {
        read_record(&self.path_of(entry)).map_err(|e| Error::MissingRecord {
            id: entry.record_id.clone(),
            source: Box::new(e),
        })
    }

    /// Examples for `entries`, labelled by the manifest class.
    pub fn examples<'a>(
        &self,
        entries: impl IntoIterator<Item = &'a ManifestEntry>,
        arch: &ArchSpec,
        cfg: &InputConfig,
    ) -> Result<Vec<Example>> {
        entries
            .into_iter()
            .map(|e| {
                let rec = self.load(e)?;
                record_example(&rec, arch, cfg, Some(e.class)).map_err(|err| Error::MissingRecord {
                    id: e.record_id.clone(),
                    source: Box::new(err),
                })
            })
            .collect()
    }
}

/// Predicted class and class probabilities, one per example.
pub type Predictions = Vec<(usize, Vec<f64>)>;

/// Confusion-matrix metrics of `state` on `examples`.
pub fn evaluate_examples(state: &ModelState, examples: &[Example]) -> Result<(MetricsReport, Predictions)> {
    let preds = state.predict(examples)?;
    let truth: Vec<usize> = examples.iter().map(|e| e.label).collect();
    let pred: Vec<usize> = preds.iter().map(|p| p.0).collect();
    let cm = confusion_indices(&truth, &pred, ArrhythmiaClass::COUNT)?;
    Ok((metrics(&cm), preds))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub record_id: String,
    pub truth: ArrhythmiaClass,
    pub predicted: ArrhythmiaClass,
    pub probabilities: Vec<f64>,
}

/// Output of `eval`: metrics plus per-record predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub system: String,
    pub split: String,
    pub metrics: MetricsReport,
    pub predictions: Vec<Prediction>,
}

pub fn evaluate_split<'a>(
    state: &ModelState,
    entries: impl IntoIterator<Item = &'a ManifestEntry>,
    source: &DataSource,
    cfg: &InputConfig,
    split_name: &str,
) -> Result<EvalReport> {
    let entries: Vec<&ManifestEntry> = entries.into_iter().collect();
    let examples = source.examples(entries.iter().copied(), &state.arch, cfg)?;
    let (report, preds) = evaluate_examples(state, &examples)?;
    let predictions = entries
        .iter()
        .zip(preds)
        .map(|(e, (p, probs))| Prediction {
            record_id: e.record_id.clone(),
            truth: e.class,
            predicted: ArrhythmiaClass::from_index(p).expect("class index"),
            probabilities: probs,
        })
        .collect();
    Ok(EvalReport {
        system: state.arch.kind.display_name().to_string(),
        split: split_name.to_string(),
        metrics: report,
        predictions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub report: MetricsReport,
    pub history: History,
}

/// Output of `cv`: one report per fold plus mean and sample std.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub system: String,
    pub folds: Vec<FoldResult>,
    pub aggregate: AggregateReport,
}

/// Seed for fold `k`, shared by initialization and batch order.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_add(fold as u64)
}

/// Trains on every fold except `fold` and validates on `fold`. `by_fold[k]`
/// holds the examples of fold `k`. The test split is never touched.
pub fn run_fold(
    by_fold: &[Vec<Example>],
    fold: usize,
    arch: &ArchSpec,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(ModelState, FoldResult)> {
    let val = by_fold
        .get(fold)
        .ok_or_else(|| Error::domain(format!("fold {fold} out of range")))?;
    let train_set: Vec<Example> = by_fold
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != fold)
        .flat_map(|(_, v)| v.iter().cloned())
        .collect();
    let s = fold_seed(seed, fold);
    let state = ModelState::build(arch.clone(), s)?;
    let cfg = TrainConfig { seed: s, ..cfg.clone() };
    let (state, history) = train(state, &train_set, val, &cfg)?;
    let (report, _) = evaluate_examples(&state, val)?;
    Ok((state, FoldResult { fold, report, history }))
}

/// Loads each fold's examples from the manifest.
pub fn load_folds(
    manifest: &DatasetManifest,
    source: &DataSource,
    arch: &ArchSpec,
    cfg: &InputConfig,
) -> Result<Vec<Vec<Example>>> {
    let n = manifest.n_folds();
    if n < 2 {
        return Err(Error::domain(
            "manifest has no cross-validation folds; run the split step first",
        ));
    }
    (0..n)
        .map(|k| source.examples(manifest.fold_entries(k), arch, cfg))
        .collect()
}

pub fn collect_cv(system: &str, mut folds: Vec<FoldResult>) -> CvReport {
    folds.sort_by_key(|f| f.fold);
    let reports: Vec<MetricsReport> = folds.iter().map(|f| f.report.clone()).collect();
    CvReport {
        system: system.to_string(),
        aggregate: aggregate(&reports),
        folds,
    }
}

/// Sequential k-fold cross-validation over the manifest's train/val folds.
pub fn cross_validate(
    manifest: &DatasetManifest,
    source: &DataSource,
    arch: &ArchSpec,
    input: &InputConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<CvReport> {
    let by_fold = load_folds(manifest, source, arch, input)?;
    let folds = (0..by_fold.len())
        .map(|k| run_fold(&by_fold, k, arch, cfg, seed).map(|r| r.1))
        .collect::<Result<Vec<_>>>()?;
    Ok(collect_cv(arch.kind.display_name(), folds))
}

/// Architecture with input shape and auxiliary width set for `input`.
pub fn arch_for_input(arch: ArchSpec, input: &InputConfig) -> ArchSpec {
    arch.with_aux_features(input.aux_len())
}

/// Convenience for writing a JSON value to disk.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(format!("{}: {e}", path.display())))
}

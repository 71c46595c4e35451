use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ecg_arrhythmia::dataset::{read_id_list, scan_directory, DatasetManifest, SplitSpec};
use ecg_arrhythmia::filter::{design_bandpass, BandpassSpec};
use ecg_arrhythmia::metrics::{render_details, render_table, write_confusion_png, ConfusionMatrix, MetricsReport};
use ecg_arrhythmia::nn::checkpoint::{load_checkpoint, save_checkpoint, CheckpointExtras};
use ecg_arrhythmia::nn::model::{ArchSpec, ModelState};
use ecg_arrhythmia::nn::train::{train, TrainConfig};
use ecg_arrhythmia::pipeline::{
    arch_for_input, collect_cv, evaluate_examples, evaluate_split, load_folds, read_json, run_fold, write_json,
    CvReport, DataSource, EvalReport, InputConfig,
};
use ecg_arrhythmia::qrs::{detect_qrs, DetectorConfig};
use ecg_arrhythmia::raster::{rasterize, write_png, RasterConfig};
use ecg_arrhythmia::record::read_record;
use rayon::prelude::*;
use serde_json::json;

use crate::{
    Cli, Command, CvArgs, DatasetCommand, DetectArgs, EvalArgs, FilterArgs, ModelArgs, RasterizeArgs, ReportArgs,
    ReportFormat, SplitName, TrainArgs,
};

struct Ctx {
    seed: u64,
    verbose: bool,
    jobs: usize,
}

impl Ctx {
    fn note(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let ctx = Ctx {
        seed: cli.seed,
        verbose: cli.verbose,
        jobs: cli.jobs,
    };
    match &cli.command {
        Command::Detect(a) => detect(&ctx, a),
        Command::Rasterize(a) => rasterize_cmd(&ctx, a),
        Command::Dataset(d) => dataset(&ctx, d),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Cv(a) => cv(&ctx, a),
        Command::Report(a) => report(a),
        Command::Filter(a) => filter(a),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn detect(ctx: &Ctx, a: &DetectArgs) -> Result<()> {
    let rec = read_record(&a.input)?;
    let mut cfg = DetectorConfig::for_sampling_rate(rec.sampling_hz());
    if let Some(w) = a.window {
        cfg.integration_window = w as usize;
    }
    let ann = detect_qrs(&rec, a.lead, &cfg)?;
    ctx.note(format!("{}: {} beats on lead {}", rec.record_id(), ann.len(), a.lead));
    write_json(&ann, &a.out)?;
    Ok(())
}

fn rasterize_cmd(ctx: &Ctx, a: &RasterizeArgs) -> Result<()> {
    let rec = read_record(&a.input)?;
    let cfg = RasterConfig {
        supersample: a.supersample as usize,
        ..RasterConfig::default()
    };
    let img = rasterize(&rec, &cfg)?;
    write_png(&img, &a.out)?;
    ctx.note(format!("{} -> {}", rec.record_id(), a.out.display()));
    Ok(())
}

fn dataset(ctx: &Ctx, cmd: &DatasetCommand) -> Result<()> {
    match cmd {
        DatasetCommand::Build { data_dir, out } => {
            let entries = scan_directory(data_dir)?;
            if entries.is_empty() {
                bail!("no labelled records under {}", data_dir.display());
            }
            let m = DatasetManifest::new(entries, ctx.seed);
            ctx.note(format!("{} records: {:?}", m.entries.len(), m.counts_before));
            m.save(out)?;
        }
        DatasetCommand::Balance { manifest, out } => {
            let mut m = DatasetManifest::load(manifest)?;
            m.seed = ctx.seed;
            m.balance()?;
            ctx.note(format!("balanced to {:?}", m.counts_after));
            m.save(out)?;
        }
        DatasetCommand::Split {
            manifest,
            test_fraction,
            folds,
            out,
        } => {
            let mut m = DatasetManifest::load(manifest)?;
            m.split(SplitSpec {
                test_fraction: *test_fraction,
                n_folds: *folds as usize,
                seed: ctx.seed,
            })?;
            ctx.note(format!(
                "{} test entries, {} folds",
                m.test_entries().count(),
                m.n_folds()
            ));
            m.save(out)?;
        }
        DatasetCommand::Exclude { manifest, ids, out } => {
            let mut m = DatasetManifest::load(manifest)?;
            let ids = read_id_list(ids)?;
            m.exclude(&ids)?;
            ctx.note(format!("excluded {} ids", ids.len()));
            m.save(out)?;
        }
    }
    Ok(())
}

fn data_dir(explicit: &Option<PathBuf>, manifest: &Path) -> PathBuf {
    explicit.clone().unwrap_or_else(|| {
        manifest
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
    })
}

fn model_setup(ctx: &Ctx, m: &ModelArgs) -> (ArchSpec, InputConfig, TrainConfig) {
    let input = InputConfig {
        with_qrs_features: m.with_qrs_features,
        ..InputConfig::default()
    };
    let mut arch = ArchSpec::new(m.arch);
    if let Some(len) = m.input_len {
        if !m.arch.is_image() {
            arch = arch.with_input_len(len as usize);
        }
    }
    if let Some(f) = m.filters {
        arch = arch.with_filters(f as usize);
    }
    if let Some(u) = &m.units {
        arch = arch.with_units(u);
    }
    let cfg = TrainConfig {
        lr_initial: m.lr,
        max_epochs: m.epochs,
        batch_size: m.batch_size as usize,
        early_stopping_patience: (m.patience > 0).then_some(m.patience),
        plateau_patience: m.plateau_patience,
        seed: ctx.seed,
        ..TrainConfig::default()
    };
    (arch_for_input(arch, &input), input, cfg)
}

fn train_cmd(ctx: &Ctx, a: &TrainArgs) -> Result<()> {
    let (arch, input, cfg) = model_setup(ctx, &a.model);
    arch.validate()?;
    cfg.validate()?;
    let manifest = DatasetManifest::load(&a.model.manifest)?;
    if a.fold >= manifest.n_folds() {
        bail!(
            "fold {} not in manifest {} ({} folds)",
            a.fold,
            a.model.manifest.display(),
            manifest.n_folds()
        );
    }
    let source = DataSource::new(data_dir(&a.model.data_dir, &a.model.manifest));
    let train_set = source.examples(manifest.training_entries(a.fold), &arch, &input)?;
    let val_set = source.examples(manifest.fold_entries(a.fold), &arch, &input)?;
    ctx.note(format!(
        "{}: {} parameters, {} train / {} val examples",
        arch.kind.display_name(),
        ecg_arrhythmia::nn::model::Network::new(&arch)?.param_count(),
        train_set.len(),
        val_set.len()
    ));
    let state = ModelState::build(arch, ctx.seed)?;
    let (state, history) = train(state, &train_set, &val_set, &cfg)?;
    let (val_report, _) = evaluate_examples(&state, &val_set)?;
    ctx.note(format!(
        "best epoch {}, val accuracy {:.4}",
        history.best_epoch + 1,
        val_report.accuracy
    ));
    let extras = CheckpointExtras {
        train_config: Some(cfg),
        metrics: Some(json!({
            "validation_fold": a.fold,
            "val_accuracy": val_report.accuracy,
            "val_macro_f1": val_report.macro_f1,
            "best_epoch": history.best_epoch,
        })),
        input: Some(serde_json::to_value(&input)?),
    };
    save_checkpoint(&state, extras, &a.out)?;
    write_text(&sibling(&a.out, "history.csv"), &history.to_csv())?;
    Ok(())
}

/// `<stem>.<suffix>` next to a checkpoint stem.
fn sibling(stem: &Path, suffix: &str) -> PathBuf {
    let base = match stem.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("params") => stem.with_extension(""),
        _ => stem.to_path_buf(),
    };
    let mut s = base.into_os_string();
    s.push(".");
    s.push(suffix);
    s.into()
}

fn eval(ctx: &Ctx, a: &EvalArgs) -> Result<()> {
    let (state, meta) = load_checkpoint(&a.ckpt)?;
    let input: InputConfig = match meta.input {
        Some(v) => serde_json::from_value(v).context("checkpoint input settings")?,
        None => InputConfig::default(),
    };
    let manifest = DatasetManifest::load(&a.manifest)?;
    let source = DataSource::new(data_dir(&a.data_dir, &a.manifest));
    let (entries, name): (Vec<_>, &str) = match a.split {
        SplitName::Test => (manifest.test_entries().collect(), "test"),
        SplitName::TrainVal => (
            (0..manifest.n_folds()).flat_map(|k| manifest.fold_entries(k)).collect(),
            "train_val",
        ),
    };
    if entries.is_empty() {
        bail!("manifest {} has no {name} entries", a.manifest.display());
    }
    let report = evaluate_split(&state, entries, &source, &input, name)?;
    ctx.note(format!(
        "{name}: accuracy {:.4}, macro F1 {:.4}",
        report.metrics.accuracy, report.metrics.macro_f1
    ));
    write_json(&report, &a.out)?;
    Ok(())
}

fn cv(ctx: &Ctx, a: &CvArgs) -> Result<()> {
    let (arch, input, cfg) = model_setup(ctx, &a.model);
    arch.validate()?;
    cfg.validate()?;
    let manifest = DatasetManifest::load(&a.model.manifest)?;
    let source = DataSource::new(data_dir(&a.model.data_dir, &a.model.manifest));
    let by_fold = load_folds(&manifest, &source, &arch, &input)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;

    let pool = rayon::ThreadPoolBuilder::new().num_threads(ctx.jobs).build()?;
    let results: Vec<_> = pool.install(|| {
        (0..by_fold.len())
            .into_par_iter()
            .map(|k| {
                ctx.note(format!("fold {k}: training"));
                run_fold(&by_fold, k, &arch, &cfg, ctx.seed).map(|r| r.1)
            })
            .collect::<Result<_, _>>()
    })?;
    for f in &results {
        write_json(f, &a.out.join(format!("fold_{}.json", f.fold)))?;
        write_text(&a.out.join(format!("fold_{}_history.csv", f.fold)), &f.history.to_csv())?;
    }
    let report = collect_cv(arch.kind.display_name(), results);
    write_json(&report, &a.out.join("cv_report.json"))?;
    print!("{}", cv_table(&report));
    Ok(())
}

fn cv_table(r: &CvReport) -> String {
    let rows: Vec<(String, &MetricsReport)> = r
        .folds
        .iter()
        .map(|f| (format!("{} fold {}", r.system, f.fold), &f.report))
        .collect();
    let mut out = render_table(&rows);
    out.push_str(&format!(
        "mean over {} folds: accuracy {:.2}% ± {:.2}, macro F1 {:.4} ± {:.4}\n",
        r.aggregate.folds,
        100.0 * r.aggregate.accuracy.mean,
        100.0 * r.aggregate.accuracy.std,
        r.aggregate.macro_f1.mean,
        r.aggregate.macro_f1.std
    ));
    out
}

enum AnyReport {
    Eval(EvalReport),
    Cv(CvReport),
}

fn load_report(path: &Path) -> Result<AnyReport> {
    let v: serde_json::Value = read_json(path)?;
    if v.get("folds").is_some() {
        Ok(AnyReport::Cv(
            serde_json::from_value(v).with_context(|| format!("{}: not a cv report", path.display()))?,
        ))
    } else {
        Ok(AnyReport::Eval(
            serde_json::from_value(v).with_context(|| format!("{}: not an eval report", path.display()))?,
        ))
    }
}

fn summed_confusion(r: &CvReport) -> ConfusionMatrix {
    let n = r.folds.first().map_or(5, |f| f.report.confusion.n_classes());
    let mut cm = ConfusionMatrix::zeros(n);
    for f in &r.folds {
        for (t, row) in f.report.confusion.counts.iter().enumerate() {
            for (p, v) in row.iter().enumerate() {
                cm.counts[t][p] += v;
            }
        }
    }
    cm
}

fn report(a: &ReportArgs) -> Result<()> {
    let rep = load_report(&a.input)?;
    let text = match (a.format, &rep) {
        (ReportFormat::Png, r) => {
            let Some(out) = &a.out else {
                bail!("--format png needs --out");
            };
            let cm = match r {
                AnyReport::Eval(e) => e.metrics.confusion.clone(),
                AnyReport::Cv(c) => summed_confusion(c),
            };
            write_confusion_png(&cm, out)?;
            return Ok(());
        }
        (ReportFormat::Json, AnyReport::Eval(e)) => serde_json::to_string_pretty(e)? + "\n",
        (ReportFormat::Json, AnyReport::Cv(c)) => serde_json::to_string_pretty(c)? + "\n",
        (ReportFormat::Table, AnyReport::Eval(e)) => {
            render_table(&[(e.system.clone(), &e.metrics)]) + "\n" + &render_details(&e.metrics)
        }
        (ReportFormat::Table, AnyReport::Cv(c)) => cv_table(c),
    };
    match &a.out {
        Some(p) => write_text(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn filter(a: &FilterArgs) -> Result<()> {
    let spec = BandpassSpec {
        lowcut_hz: a.low,
        highcut_hz: a.high,
        order: a.order as usize,
        sampling_hz: a.fs,
    };
    let c = design_bandpass(&spec)?;
    let nyq = spec.nyquist_hz();
    let response: Vec<_> = (0..=a.points)
        .map(|i| {
            let hz = nyq * i as f64 / a.points.max(1) as f64;
            let mag = c.magnitude_at(hz, a.fs);
            json!({ "hz": hz, "magnitude": mag, "db": 20.0 * mag.log10() })
        })
        .collect();
    let doc = json!({ "spec": spec, "b": c.b, "a": c.a, "stable": c.is_stable(), "response": response });
    let text = serde_json::to_string_pretty(&doc)? + "\n";
    match &a.out {
        Some(p) => write_text(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

//! One function per subcommand. The binary only parses arguments, calls
//! these, and prints the returned summary as JSON.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use tkg_decay_core::dataset::{Dataset, TimeFormat};
use tkg_decay_core::encoder::{derive_labels, ActivityClass};
use tkg_decay_core::halflife::estimate_half_life;
use tkg_decay_core::model::Model;
use tkg_decay_core::synth::{self, SweepParam, SweepRow};
use tkg_decay_core::training::{self, quad_classes, EpochStats, FilterReport, LabelSource};

use crate::checkpoint;
use crate::config::{RunConfig, Scope};
use crate::error::{Error, Result};
use crate::report;
use crate::tsv::{self, interval_histogram, parse_day_for, write_all, HistogramBin, Ingested};

pub const REPORT_FILE: &str = "report.json";
pub const VALIDITY_FILE: &str = "validity.tsv";
pub const LABELS_FILE: &str = "labels.tsv";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const PARAMS_FILE: &str = "params.json";
pub const SYNTH_FILE: &str = "synthetic.tsv";
pub const TRUTH_FILE: &str = "truth.tsv";

/// Reads inputs and applies the configured evaluation day.
pub fn load(inputs: &[PathBuf], cfg: &RunConfig) -> Result<Ingested> {
    let mut ing = tsv::read_quadruples(inputs)?;
    if let Some(raw) = &cfg.t_current {
        let day = parse_day_for(&ing.dataset, raw)
            .ok_or_else(|| Error::Config(format!("`t_current` value `{raw}` does not match the input date format")))?;
        ing.dataset.set_t_current(day)?;
    }
    Ok(ing)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileSummary {
    pub path: String,
    pub quadruples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub files: Vec<FileSummary>,
    pub quadruples: usize,
    pub entities: usize,
    pub relations: usize,
    pub fact_keys: usize,
    pub keys_with_updates: usize,
    pub date_format: &'static str,
    pub first_day: String,
    pub last_day: String,
    pub t_current: String,
}

pub fn summarize(ing: &Ingested) -> DatasetSummary {
    let ds = &ing.dataset;
    let day = |d: i64| tsv::format_day(ds.vocab.time_format, d + ds.vocab.epoch);
    DatasetSummary {
        files: ing
            .files
            .iter()
            .map(|f| FileSummary {
                path: f.path.display().to_string(),
                quadruples: f.range.len(),
            })
            .collect(),
        quadruples: ds.len(),
        entities: ds.vocab.num_entities(),
        relations: ds.vocab.num_relations(),
        fact_keys: ds.timelines.len(),
        keys_with_updates: ds.timelines.values().filter(|t| t.has_updates()).count(),
        date_format: match ds.vocab.time_format {
            TimeFormat::Iso => "iso",
            TimeFormat::Integer => "integer",
        },
        first_day: day(ds.min_timestamp()),
        last_day: day(ds.max_timestamp()),
        t_current: day(ds.t_current),
    }
}

pub fn ingest(inputs: &[PathBuf], cfg: &RunConfig) -> Result<DatasetSummary> {
    Ok(summarize(&load(inputs, cfg)?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassBalance {
    pub active_keys: usize,
    pub inactive_keys: usize,
    pub active_quadruples: usize,
    pub inactive_quadruples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stats {
    #[serde(flatten)]
    pub dataset: DatasetSummary,
    pub updates: usize,
    pub interval_histogram: Vec<HistogramBin>,
    /// Labels under the configured policy; absent when no key was ever updated.
    pub class_balance: Option<ClassBalance>,
}

pub fn stats(inputs: &[PathBuf], cfg: &RunConfig) -> Result<Stats> {
    let ing = load(inputs, cfg)?;
    let ds = &ing.dataset;
    let class_balance = match derive_labels(&ds.timelines, cfg.pipeline.label_policy) {
        Ok(labels) => {
            let per_quad = quad_classes(ds, &labels)?;
            let count = |c: ActivityClass| labels.values().filter(|x| **x == c).count();
            let quads = |c: ActivityClass| per_quad.iter().filter(|x| **x == c).count();
            Some(ClassBalance {
                active_keys: count(ActivityClass::Active),
                inactive_keys: count(ActivityClass::Inactive),
                active_quadruples: quads(ActivityClass::Active),
                inactive_quadruples: quads(ActivityClass::Inactive),
            })
        }
        Err(tkg_decay_core::Error::NoUpdates) => None,
        Err(e) => return Err(e.into()),
    };
    Ok(Stats {
        dataset: summarize(&ing),
        updates: ds.timelines.values().map(|t| t.intervals.len()).sum(),
        interval_histogram: interval_histogram(&ds.quadruples),
        class_balance,
    })
}

/// Runs training with per-epoch timing.
fn timed_train(
    run: impl FnOnce(&mut dyn FnMut(&EpochStats)) -> Result<()>,
) -> Result<Vec<(EpochStats, f64)>> {
    let mut log = Vec::new();
    let mut last = Instant::now();
    run(&mut |s: &EpochStats| {
        let now = Instant::now();
        log.push((s.clone(), (now - last).as_secs_f64()));
        last = now;
    })?;
    Ok(log)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub final_accuracy: f64,
    pub final_loss: Option<f64>,
    pub dead_params: Vec<String>,
    pub params: String,
}

pub fn train(inputs: &[PathBuf], out_dir: &Path, cfg: &RunConfig) -> Result<TrainSummary> {
    let ing = load(inputs, cfg)?;
    let ds = &ing.dataset;
    let targets = derive_labels(&ds.timelines, cfg.pipeline.label_policy)?;
    let y = quad_classes(ds, &targets)?;
    let mut outcome = None;
    let log = timed_train(|obs| {
        outcome = Some(training::train(ds, &y, &cfg.pipeline.model, &cfg.pipeline.train, obs)?);
        Ok(())
    })?;
    let outcome = outcome.expect("training ran");
    let params = out_dir.join(PARAMS_FILE);
    checkpoint::save(&params, &outcome.model, &ds.vocab)?;
    write_all(&out_dir.join(TRAIN_LOG_FILE), report::train_log_csv(&log).as_bytes())?;
    let probs = outcome.model.predict(ds)?;
    let (_, means) = training::key_classes_from_probs(ds, &probs);
    write_all(&out_dir.join(LABELS_FILE), report::labels_tsv(ds, &targets, Some(&means)).as_bytes())?;
    if !outcome.dead_params.is_empty() {
        log::warn!("parameters without gradient: {}", outcome.dead_params.join(", "));
    }
    Ok(TrainSummary {
        epochs_run: outcome.log.len(),
        stopped_early: outcome.stopped_early,
        final_accuracy: outcome.final_accuracy,
        final_loss: outcome.log.last().map(|s| s.total),
        dead_params: outcome.dead_params,
        params: params.display().to_string(),
    })
}

/// Input files of `filter`.
#[derive(Debug, Clone, Default)]
pub struct FilterInputs {
    pub train: PathBuf,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Trained checkpoint replacing the training stage.
    pub params: Option<PathBuf>,
    /// Ground-truth sidecar whose classes replace the classifier.
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterSummary {
    pub outputs: Vec<String>,
    pub quadruples: usize,
    pub kept: usize,
    pub outdated: usize,
    pub active_half_life: f64,
    pub inactive_half_life: f64,
}

fn output_name(out_dir: &Path, input: &Path, taken: &mut BTreeSet<PathBuf>) -> Result<PathBuf> {
    let name = input
        .file_name()
        .ok_or_else(|| Error::Config(format!("input `{}` has no file name", input.display())))?;
    let path = out_dir.join(name);
    if !taken.insert(path.clone()) {
        return Err(Error::Config(format!(
            "two inputs would both be written to `{}`",
            path.display()
        )));
    }
    Ok(path)
}

/// Runs the pipeline over the configured scope and writes everything under `out_dir`.
pub fn filter(inputs: &FilterInputs, out_dir: &Path, cfg: &RunConfig) -> Result<FilterSummary> {
    let extra: Vec<&PathBuf> = inputs.valid.iter().chain(&inputs.test).collect();
    let filtered: Vec<PathBuf> = match cfg.scope {
        Scope::Train => vec![inputs.train.clone()],
        Scope::All => std::iter::once(&inputs.train).chain(extra.iter().copied()).cloned().collect(),
    };
    let ing = load(&filtered, cfg)?;
    let ds = &ing.dataset;
    let mut pipeline = cfg.pipeline.clone();
    if let Some(truth) = &inputs.truth {
        pipeline.label_source = LabelSource::Provided(report::read_truth(truth, ds)?.classes);
    }
    let trained = match (&inputs.params, &pipeline.label_source) {
        (Some(p), LabelSource::Predicted) => Some(checkpoint::load(p, &ds.vocab)?),
        _ => None,
    };
    let mut output = None;
    let log = timed_train(|obs| {
        output = Some(training::pipeline_run(ds, &pipeline, trained.as_ref(), obs)?);
        Ok(())
    })?;
    let output = output.expect("pipeline ran");

    let mut taken = BTreeSet::new();
    let mut outputs = Vec::new();
    for f in &ing.files {
        let path = output_name(out_dir, &f.path, &mut taken)?;
        tsv::export_filtered(&path, &f.path, ds, f.range.clone(), &output.keep)?;
        outputs.push(path.display().to_string());
    }
    if cfg.scope == Scope::Train {
        for src in extra {
            let path = output_name(out_dir, src, &mut taken)?;
            std::fs::copy(src, &path).map_err(|e| Error::io(src, e))?;
            outputs.push(path.display().to_string());
        }
    }
    report::write_json(&out_dir.join(REPORT_FILE), &output.report)?;
    write_all(&out_dir.join(VALIDITY_FILE), report::validity_tsv(ds, &output.scores).as_bytes())?;
    if let Some(probs) = &output.key_probs {
        let targets = derive_labels(&ds.timelines, pipeline.label_policy)?;
        write_all(&out_dir.join(LABELS_FILE), report::labels_tsv(ds, &targets, Some(probs)).as_bytes())?;
    }
    if let Some(t) = &output.training {
        write_all(&out_dir.join(TRAIN_LOG_FILE), report::train_log_csv(&log).as_bytes())?;
        checkpoint::save(&out_dir.join(PARAMS_FILE), &t.model, &ds.vocab)?;
    }
    for w in &output.report.warnings {
        log::warn!("{w}");
    }
    Ok(summary_of(&output.report, outputs))
}

fn summary_of(r: &FilterReport, outputs: Vec<String>) -> FilterSummary {
    FilterSummary {
        outputs,
        quadruples: r.quadruples,
        kept: r.kept,
        outdated: r.outdated,
        active_half_life: r.active.half_life_days,
        inactive_half_life: r.inactive.half_life_days,
    }
}

/// Runs the library pipeline on an already loaded dataset; the report is
/// exactly what `filter` writes.
pub fn filter_report(ds: &Dataset, cfg: &RunConfig, trained: Option<&Model>) -> Result<FilterReport> {
    Ok(training::pipeline_run(ds, &cfg.pipeline, trained, &mut |_| {})?.report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthSummary {
    pub dataset: String,
    pub truth: String,
    pub quadruples: usize,
    pub fact_keys: usize,
    pub stale: usize,
    pub warnings: Vec<String>,
}

pub fn synth(out_dir: &Path, cfg: &RunConfig) -> Result<SynthSummary> {
    let out = synth::generate(&cfg.synth)?;
    let ds = &out.dataset;
    let data = out_dir.join(SYNTH_FILE);
    let truth = out_dir.join(TRUTH_FILE);
    tsv::write_quadruples(&data, ds, 0..ds.len())?;
    write_all(&truth, report::truth_tsv(ds, &out.truth).as_bytes())?;
    for w in &out.warnings {
        log::warn!("{w}");
    }
    Ok(SynthSummary {
        dataset: data.display().to_string(),
        truth: truth.display().to_string(),
        quadruples: ds.len(),
        fact_keys: ds.timelines.len(),
        stale: out.truth.stale.iter().filter(|s| **s).count(),
        warnings: out.warnings,
    })
}

/// `start:stop:step` (inclusive) or a comma-separated list.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("invalid grid `{spec}`"));
    let parts: Vec<&str> = spec.split(':').collect();
    let values = match parts.as_slice() {
        [a, b, s] => {
            let (a, b, s): (f64, f64, f64) = (
                a.trim().parse().map_err(|_| bad())?,
                b.trim().parse().map_err(|_| bad())?,
                s.trim().parse().map_err(|_| bad())?,
            );
            if !(s > 0.0 && b >= a && a.is_finite() && b.is_finite()) {
                return Err(bad());
            }
            let n = ((b - a) / s + 1e-9).floor() as usize;
            (0..=n).map(|i| a + i as f64 * s).collect()
        }
        [_] => spec
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?,
        _ => return Err(bad()),
    };
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(bad());
    }
    Ok(values)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub param: &'static str,
    pub rows: usize,
    pub best: Option<SweepRow>,
    pub active_half_life: f64,
    pub inactive_half_life: f64,
    pub csv: String,
}

/// Where the sweep takes its activity classes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepLabels {
    Truth,
    Derived,
}

pub fn sweep(
    input: &Path,
    truth: &Path,
    param: SweepParam,
    grid: &[f64],
    labels: SweepLabels,
    out: &Path,
    cfg: &RunConfig,
) -> Result<SweepSummary> {
    let ing = load(&[input.to_path_buf()], cfg)?;
    let ds = &ing.dataset;
    let gt = report::read_truth(truth, ds)?;
    let classes: BTreeMap<_, _> = match labels {
        SweepLabels::Truth => gt.classes.clone(),
        SweepLabels::Derived => derive_labels(&ds.timelines, cfg.pipeline.label_policy)?,
    };
    let per_quad: Vec<ActivityClass> = ds
        .quadruples
        .iter()
        .map(|q| classes.get(&q.key()).copied().unwrap_or(ActivityClass::Inactive))
        .collect();
    let est = estimate_half_life(&classes, &ds.timelines, ds.time_span(), cfg.pipeline.missing_interval)?;
    let result = synth::sweep(param, grid, ds, &gt.stale, &per_quad, &est.model, cfg.pipeline.theta)?;
    write_all(out, report::sweep_csv(&result).as_bytes())?;
    Ok(SweepSummary {
        param: param.name(),
        rows: result.rows.len(),
        best: result.best_row().cloned(),
        active_half_life: est.model.half_life(ActivityClass::Active),
        inactive_half_life: est.model.half_life(ActivityClass::Inactive),
        csv: out.display().to_string(),
    })
}

//! Report, log and sidecar files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use tkg_decay_core::dataset::{Dataset, Day, FactKey};
use tkg_decay_core::encoder::ActivityClass;
use tkg_decay_core::halflife::ValidityScore;
use tkg_decay_core::synth::{GroundTruth, SweepResult};
use tkg_decay_core::training::EpochStats;

use crate::error::{Error, Result};
use crate::tsv::{format_day, parse_day, write_all};

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    s.push('\n');
    write_all(path, s.as_bytes())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Per-quadruple validity scores, in dataset order.
pub fn validity_tsv(dataset: &Dataset, scores: &[ValidityScore]) -> String {
    let mut out = String::from("head\trelation\ttail\ttimestamp\tclass\thalf_life\tvalidity\toutdated\texpiration\n");
    let fmt = dataset.vocab.time_format;
    for s in scores {
        let q = &dataset.quadruples[s.index];
        let expiration = s.expiration.map_or_else(
            || "never".to_string(),
            |e| format_day(fmt, floor_day(e) + dataset.vocab.epoch),
        );
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            dataset.vocab.entity_name(q.head),
            dataset.vocab.relation_name(q.relation),
            dataset.vocab.entity_name(q.tail),
            format_day(fmt, dataset.raw_day(q)),
            s.class.as_str(),
            s.half_life,
            s.validity,
            s.outdated,
            expiration
        );
    }
    out
}

fn floor_day(x: f64) -> Day {
    x.floor() as Day
}

/// Per-key labels: policy label `y`, mean predicted probability, mean interval.
pub fn labels_tsv(
    dataset: &Dataset,
    targets: &BTreeMap<FactKey, ActivityClass>,
    probs: Option<&BTreeMap<FactKey, f64>>,
) -> String {
    let mut out = String::from("head\trelation\ty\ty_hat\tmean_interval\n");
    for (key, tl) in &dataset.timelines {
        let y = targets.get(key).map_or_else(String::new, |c| c.label().to_string());
        let p = opt(probs.and_then(|m| m.get(key).copied()));
        let mean = tl
            .mean_interval
            .map_or_else(String::new, |m| (*m.numer() as f64 / *m.denom() as f64).to_string());
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            dataset.vocab.entity_name(key.head),
            dataset.vocab.relation_name(key.relation),
            y,
            p,
            mean
        );
    }
    out
}

/// Training log with wall-clock seconds per epoch.
pub fn train_log_csv(log: &[(EpochStats, f64)]) -> String {
    let mut out = String::from("epoch,l_gat,l_bec,total,accuracy,val_accuracy,seconds\n");
    for (s, secs) in log {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{:.6}",
            s.epoch,
            s.l_gat,
            s.l_bec,
            s.total,
            s.accuracy,
            opt(s.val_accuracy),
            secs
        );
    }
    out
}

pub fn sweep_csv(result: &SweepResult) -> String {
    let mut out = format!("{},precision,recall,f1,filtered_fraction\n", result.param.name());
    for r in &result.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.value,
            opt(r.precision),
            opt(r.recall),
            opt(r.f1),
            r.filtered_fraction
        );
    }
    out
}

/// Ground-truth sidecar: `head, relation, class, update times`.
pub fn truth_tsv(dataset: &Dataset, truth: &GroundTruth) -> String {
    let mut out = String::from("head\trelation\tclass\tupdate_times\n");
    let fmt = dataset.vocab.time_format;
    for (key, class) in &truth.classes {
        let times: Vec<String> = truth
            .update_times
            .get(key)
            .map(|ts| ts.iter().map(|&t| format_day(fmt, t + dataset.vocab.epoch)).collect())
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}",
            dataset.vocab.entity_name(key.head),
            dataset.vocab.relation_name(key.relation),
            class.as_str(),
            times.join(",")
        );
    }
    out
}

/// Parses a ground-truth sidecar against `dataset`'s vocabulary.
pub fn read_truth(path: &Path, dataset: &Dataset) -> Result<GroundTruth> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut classes = BTreeMap::new();
    let mut update_times = BTreeMap::new();
    for (no, line) in text.lines().enumerate() {
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: no + 1,
            message,
        };
        if (no == 0 && line.starts_with("head\t")) || line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 3 {
            return Err(err("expected head, relation, class, update times".into()));
        }
        let (Some(head), Some(relation)) = (dataset.vocab.entity_id(cols[0]), dataset.vocab.relation_id(cols[1])) else {
            return Err(err(format!("unknown fact key ({}, {})", cols[0], cols[1])));
        };
        let class = match cols[2] {
            "active" => ActivityClass::Active,
            "inactive" => ActivityClass::Inactive,
            other => return Err(err(format!("unknown class `{other}`"))),
        };
        let mut times = Vec::new();
        for t in cols.get(3).map_or("", |s| s.trim()).split(',').filter(|s| !s.is_empty()) {
            let (_, raw) = parse_day(t).ok_or_else(|| err(format!("unparseable date `{t}`")))?;
            times.push(raw - dataset.vocab.epoch);
        }
        let key = FactKey { head, relation };
        classes.insert(key, class);
        update_times.insert(key, times);
    }
    Ok(GroundTruth::from_update_times(dataset, classes, update_times))
}

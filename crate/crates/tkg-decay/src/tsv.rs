//! Tab-separated quadruple files: `head<TAB>relation<TAB>tail<TAB>date[<TAB>...]`.
//!
//! Dates are either `YYYY-MM-DD` or plain integers; one dataset may not mix
//! the two. Blank lines and lines starting with `#` are skipped, columns past
//! the fourth are ignored.

use std::fs;
use std::io::{BufWriter, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate};
use serde::Serialize;
use tkg_decay_core::dataset::{build_timelines, Dataset, DatasetBuilder, Day, Quadruple, TimeFormat};

use crate::error::{Error, Result};

/// One input file and the quadruples it contributed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceFile {
    pub path: PathBuf,
    pub range: Range<usize>,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub dataset: Dataset,
    pub files: Vec<SourceFile>,
}

/// Parses a date column into its format and raw day value.
pub fn parse_day(field: &str) -> Option<(TimeFormat, i64)> {
    if let Ok(n) = field.parse::<i64>() {
        return Some((TimeFormat::Integer, n));
    }
    let d = NaiveDate::parse_from_str(field, "%Y-%m-%d").ok()?;
    Some((TimeFormat::Iso, i64::from(d.num_days_from_ce())))
}

/// Inverse of [`parse_day`].
pub fn format_day(format: TimeFormat, raw: i64) -> String {
    match format {
        TimeFormat::Integer => raw.to_string(),
        TimeFormat::Iso => i32::try_from(raw)
            .ok()
            .and_then(NaiveDate::from_num_days_from_ce_opt)
            .map_or_else(|| raw.to_string(), |d| d.format("%Y-%m-%d").to_string()),
    }
}

/// Parses a day given in the dataset's own units into a day index.
pub fn parse_day_for(dataset: &Dataset, field: &str) -> Option<Day> {
    let (format, raw) = parse_day(field.trim())?;
    (format == dataset.vocab.time_format).then(|| raw - dataset.vocab.epoch)
}

struct Record<'a> {
    fields: [&'a str; 3],
    raw: i64,
}

fn parse_lines<'a>(path: &Path, text: &'a str, format: &mut Option<TimeFormat>) -> Result<Vec<Record<'a>>> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: no + 1,
            message,
        };
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        if cols.len() < 4 {
            return Err(err(format!("expected 4 tab-separated fields, found {}", cols.len())));
        }
        if let Some(i) = cols[..4].iter().position(|c| c.is_empty()) {
            return Err(err(format!("field {} is empty", i + 1)));
        }
        let (f, raw) = parse_day(cols[3]).ok_or_else(|| err(format!("unparseable date `{}`", cols[3])))?;
        match *format {
            None => *format = Some(f),
            Some(prev) if prev != f => {
                return Err(err(format!(
                    "date `{}` does not match the {} dates used earlier",
                    cols[3],
                    if prev == TimeFormat::Iso { "ISO" } else { "integer" }
                )))
            }
            _ => {}
        }
        out.push(Record {
            fields: [cols[0], cols[1], cols[2]],
            raw,
        });
    }
    Ok(out)
}

/// Reads several files into one dataset with a shared vocabulary.
pub fn read_quadruples<P: AsRef<Path>>(paths: &[P]) -> Result<Ingested> {
    let mut texts = Vec::with_capacity(paths.len());
    for p in paths {
        let p = p.as_ref();
        texts.push(fs::read_to_string(p).map_err(|e| Error::io(p, e))?);
    }
    let mut format = None;
    let mut parsed = Vec::with_capacity(paths.len());
    for (p, text) in paths.iter().zip(&texts) {
        let records = parse_lines(p.as_ref(), text, &mut format)?;
        if records.is_empty() {
            return Err(Error::Format {
                path: p.as_ref().to_path_buf(),
                message: "no quadruples".into(),
            });
        }
        parsed.push(records);
    }
    let Some(format) = format else {
        return Err(Error::Config("no input files".into()));
    };
    let mut builder = DatasetBuilder::new(format);
    let mut files = Vec::with_capacity(paths.len());
    for (p, records) in paths.iter().zip(parsed) {
        let start = builder.len();
        for r in records {
            builder.push(r.fields[0], r.fields[1], r.fields[2], r.raw);
        }
        files.push(SourceFile {
            path: p.as_ref().to_path_buf(),
            range: start..builder.len(),
        });
    }
    Ok(Ingested {
        dataset: builder.build()?,
        files,
    })
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub(crate) fn write_all(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(bytes)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// One quadruple as a TSV line, in the dataset's original date format.
pub fn format_quadruple(dataset: &Dataset, q: &Quadruple) -> String {
    format!(
        "{}\t{}\t{}\t{}",
        dataset.vocab.entity_name(q.head),
        dataset.vocab.relation_name(q.relation),
        dataset.vocab.entity_name(q.tail),
        format_day(dataset.vocab.time_format, dataset.raw_day(q))
    )
}

/// Writes the quadruples at `indices`, in the order given.
pub fn write_quadruples(path: &Path, dataset: &Dataset, indices: impl IntoIterator<Item = usize>) -> Result<usize> {
    let mut out = String::new();
    let mut n = 0;
    for i in indices {
        out.push_str(&format_quadruple(dataset, &dataset.quadruples[i]));
        out.push('\n');
        n += 1;
    }
    write_all(path, out.as_bytes())?;
    Ok(n)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HistogramBin {
    /// Inclusive lower bound in days.
    pub from: u64,
    /// Exclusive upper bound in days.
    pub to: u64,
    pub count: usize,
}

/// Power-of-two histogram of update intervals: `[1,2)`, `[2,4)`, ...
pub fn interval_histogram(quads: &[Quadruple]) -> Vec<HistogramBin> {
    let mut counts: Vec<usize> = Vec::new();
    for tl in build_timelines(quads).values() {
        for &d in &tl.intervals {
            let bin = (u64::BITS - 1 - d.leading_zeros()) as usize;
            if counts.len() <= bin {
                counts.resize(bin + 1, 0);
            }
            counts[bin] += 1;
        }
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(b, count)| HistogramBin {
            from: 1 << b,
            to: 1 << (b + 1),
            count,
        })
        .collect()
}

/// Sidecar written next to every exported file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExportStats {
    pub source: String,
    pub quadruples_in: usize,
    pub quadruples_out: usize,
    pub removed: usize,
    pub entities: usize,
    pub relations: usize,
    pub fact_keys: usize,
    pub interval_histogram: Vec<HistogramBin>,
}

pub fn stats_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".stats.json");
    PathBuf::from(s)
}

/// Writes the kept quadruples of `range` to `path` plus a `.stats.json` sidecar.
pub fn export_filtered(
    path: &Path,
    source: &Path,
    dataset: &Dataset,
    range: Range<usize>,
    keep: &[bool],
) -> Result<ExportStats> {
    let kept: Vec<usize> = range.clone().filter(|&i| keep[i]).collect();
    if kept.is_empty() {
        log::warn!("every quadruple of {} was filtered out", source.display());
    }
    write_quadruples(path, dataset, kept.iter().copied())?;
    let quads: Vec<Quadruple> = kept.iter().map(|&i| dataset.quadruples[i]).collect();
    let mut entities: Vec<u32> = quads.iter().flat_map(|q| [q.head.0, q.tail.0]).collect();
    entities.sort_unstable();
    entities.dedup();
    let mut relations: Vec<u32> = quads.iter().map(|q| q.relation.0).collect();
    relations.sort_unstable();
    relations.dedup();
    let stats = ExportStats {
        source: source.display().to_string(),
        quadruples_in: range.len(),
        quadruples_out: kept.len(),
        removed: range.len() - kept.len(),
        entities: entities.len(),
        relations: relations.len(),
        fact_keys: build_timelines(&quads).len(),
        interval_histogram: interval_histogram(&quads),
    };
    crate::report::write_json(&stats_path(path), &stats)?;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dates_round_trip() {
        for s in ["2014-01-01", "2018-12-31", "0001-01-01", "2000-02-29"] {
            let (f, raw) = parse_day(s).unwrap();
            assert_eq!(f, TimeFormat::Iso);
            assert_eq!(format_day(f, raw), s);
        }
        assert_eq!(parse_day("0001-01-01").unwrap().1, 1);
        assert_eq!(parse_day("-12"), Some((TimeFormat::Integer, -12)));
        assert_eq!(parse_day("2014-02-30"), None);
        assert_eq!(parse_day("yesterday"), None);
    }

    #[test]
    fn consecutive_dates_are_one_day_apart() {
        let a = parse_day("2014-02-28").unwrap().1;
        let b = parse_day("2014-03-01").unwrap().1;
        assert_eq!(b - a, 1);
    }

    #[test]
    fn histogram_bins_are_powers_of_two() {
        use tkg_decay_core::dataset::{EntityId, RelationId};
        let q = |t: u32, ts: i64| Quadruple {
            head: EntityId(0),
            relation: RelationId(0),
            tail: EntityId(t),
            timestamp: ts,
        };
        // intervals 1, 3, 4
        let h = interval_histogram(&[q(1, 0), q(2, 1), q(3, 4), q(4, 8)]);
        assert_eq!(
            h,
            vec![
                HistogramBin { from: 1, to: 2, count: 1 },
                HistogramBin { from: 2, to: 4, count: 1 },
                HistogramBin { from: 4, to: 8, count: 1 },
            ]
        );
    }
}

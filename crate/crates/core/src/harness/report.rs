use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::bounds::BoundReport;
use crate::error::{Error, Result};

use super::svg::render_curves;

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: String,
    pub sweep_value: f64,
    pub fold: usize,
    pub accuracy: f64,
    pub mean_retrieved: f64,
    pub fallback_rate: f64,
    pub wall_clock_ms: u64,
}

/// Rows in `(method, sweep value, fold)` order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

/// Fold-mean summary of one method at one sweep value.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub sweep_value: f64,
    pub mean_retrieved: f64,
    pub accuracy: f64,
    pub accuracy_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodCurve {
    pub method: String,
    /// Sorted by sweep value.
    pub points: Vec<CurvePoint>,
    /// Sweep-independent methods plot as a horizontal reference line.
    pub flat: bool,
}

impl MethodCurve {
    pub fn best(&self) -> &CurvePoint {
        // Earliest point wins ties.
        self.points
            .iter()
            .fold(&self.points[0], |b, p| if p.accuracy > b.accuracy { p } else { b })
    }
}

const RESULTS_HEADER: [&str; 6] = ["method", "sweepValue", "fold", "accuracy", "meanRetrieved", "fallbackRate"];
const TIMINGS_HEADER: [&str; 4] = ["method", "sweepValue", "fold", "wallClockMs"];

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T> {
    let s = rec.get(i).ok_or_else(|| Error::format(format!("missing column {i}")))?;
    s.parse()
        .map_err(|_| Error::format(format!("cannot parse {s:?} in column {i}")))
}

impl ResultTable {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Deterministic part of the table: everything except wall-clock time.
    pub fn write_results_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(RESULTS_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.method.clone(),
                fmt(r.sweep_value),
                r.fold.to_string(),
                fmt(r.accuracy),
                fmt(r.mean_retrieved),
                fmt(r.fallback_rate),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_timings_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(TIMINGS_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.method.clone(),
                fmt(r.sweep_value),
                r.fold.to_string(),
                r.wall_clock_ms.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Inverse of [`write_results_csv`](Self::write_results_csv), with
    /// wall-clock times filled from a timings file when given.
    pub fn read_csv<R: Read, T: Read>(results: R, timings: Option<T>) -> Result<Self> {
        let mut rows = Vec::new();
        let mut rdr = csv::Reader::from_reader(results);
        if rdr.headers()?.iter().collect::<Vec<_>>() != RESULTS_HEADER {
            return Err(Error::format("unexpected results header"));
        }
        for rec in rdr.records() {
            let rec = rec?;
            rows.push(ResultRow {
                method: rec.get(0).unwrap_or_default().to_string(),
                sweep_value: parse_field(&rec, 1)?,
                fold: parse_field(&rec, 2)?,
                accuracy: parse_field(&rec, 3)?,
                mean_retrieved: parse_field(&rec, 4)?,
                fallback_rate: parse_field(&rec, 5)?,
                wall_clock_ms: 0,
            });
        }
        if let Some(t) = timings {
            let mut rdr = csv::Reader::from_reader(t);
            let records: Vec<csv::StringRecord> = rdr.records().collect::<std::result::Result<_, _>>()?;
            if records.len() != rows.len() {
                return Err(Error::format("timings and results have different row counts"));
            }
            for (row, rec) in rows.iter_mut().zip(&records) {
                let same = rec.get(0) == Some(row.method.as_str())
                    && parse_field::<f64>(rec, 1)? == row.sweep_value
                    && parse_field::<usize>(rec, 2)? == row.fold;
                if !same {
                    return Err(Error::format("timings rows do not line up with results"));
                }
                row.wall_clock_ms = parse_field(rec, 3)?;
            }
        }
        Ok(ResultTable { rows })
    }

    /// Method names in first-appearance order.
    pub fn methods(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.method) {
                out.push(r.method.clone());
            }
        }
        out
    }

    /// Rows of one method at one sweep value, in fold order.
    pub fn cell(&self, method: &str, sweep_value: f64) -> Vec<&ResultRow> {
        let mut v: Vec<&ResultRow> = self
            .rows
            .iter()
            .filter(|r| r.method == method && r.sweep_value == sweep_value)
            .collect();
        v.sort_by_key(|r| r.fold);
        v
    }

    pub fn curves(&self) -> Vec<MethodCurve> {
        self.methods()
            .into_iter()
            .map(|method| {
                let mut by_sweep: BTreeMap<u64, Vec<&ResultRow>> = BTreeMap::new();
                // Selected-sweep rows differ in sweep value per fold; they form one point.
                let selected = method.ends_with("[best]");
                for r in self.rows.iter().filter(|r| r.method == method) {
                    let key = if selected { 0 } else { sweep_key(r.sweep_value) };
                    by_sweep.entry(key).or_default().push(r);
                }
                let mut points: Vec<CurvePoint> = by_sweep
                    .values()
                    .map(|rows| {
                        let k = rows.len() as f64;
                        let acc = rows.iter().map(|r| r.accuracy).sum::<f64>() / k;
                        let var = if rows.len() > 1 {
                            rows.iter().map(|r| (r.accuracy - acc).powi(2)).sum::<f64>() / (k - 1.0)
                        } else {
                            0.0
                        };
                        CurvePoint {
                            sweep_value: rows[0].sweep_value,
                            mean_retrieved: rows.iter().map(|r| r.mean_retrieved).sum::<f64>() / k,
                            accuracy: acc,
                            accuracy_std: var.sqrt(),
                        }
                    })
                    .collect();
                points.sort_by(|a, b| a.sweep_value.total_cmp(&b.sweep_value));
                let flat = selected
                    || (points.len() > 1
                        && points
                            .windows(2)
                            .all(|w| w[0].accuracy == w[1].accuracy && w[0].mean_retrieved == w[1].mean_retrieved));
                MethodCurve { method, points, flat }
            })
            .collect()
    }

    /// Per method: best sweep value, its fold-mean accuracy and fold std,
    /// then the full curve.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for c in self.curves() {
            let b = c.best();
            let _ = writeln!(
                s,
                "{}: best sweep {} accuracy {:.4} +/- {:.4} (mean retrieved {:.1})",
                c.method, b.sweep_value, b.accuracy, b.accuracy_std, b.mean_retrieved
            );
            for p in &c.points {
                let _ = writeln!(
                    s,
                    "  sweep {:>8} retrieved {:>10.1} accuracy {:.4} +/- {:.4}",
                    p.sweep_value, p.mean_retrieved, p.accuracy, p.accuracy_std
                );
            }
        }
        s
    }
}

/// Total order key for `f64` sweep values.
fn sweep_key(v: f64) -> u64 {
    let bits = v.to_bits();
    if bits >> 63 == 1 {
        !bits
    } else {
        bits | 1 << 63
    }
}

/// Files written by [`emit_reports`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub results: PathBuf,
    pub timings: PathBuf,
    pub summary: PathBuf,
    pub curves: PathBuf,
    pub bounds: Option<PathBuf>,
}

/// Writes `results.csv`, `timings.csv`, `summary.txt`, `curves.svg` and,
/// when bound reports are given, `bounds.csv` plus their text blocks
/// appended to the summary.
pub fn emit_reports(
    table: &ResultTable,
    bound_reports: Option<&[(f64, BoundReport)]>,
    output_dir: &Path,
) -> Result<ReportFiles> {
    if table.is_empty() {
        return Err(Error::domain("empty result table"));
    }
    fs::create_dir_all(output_dir)?;
    let files = ReportFiles {
        results: output_dir.join("results.csv"),
        timings: output_dir.join("timings.csv"),
        summary: output_dir.join("summary.txt"),
        curves: output_dir.join("curves.svg"),
        bounds: bound_reports.map(|_| output_dir.join("bounds.csv")),
    };
    table.write_results_csv(fs::File::create(&files.results)?)?;
    table.write_timings_csv(fs::File::create(&files.timings)?)?;
    let mut summary = table.summary();
    if let (Some(reports), Some(path)) = (bound_reports, &files.bounds) {
        let mut csv = format!("radius,{}\n", BoundReport::CSV_HEADER);
        for (r, rep) in reports {
            let _ = writeln!(csv, "{r:?},{}", rep.csv_row());
            let _ = writeln!(summary, "\nbound at radius {r}\n{}", rep.text_block());
        }
        fs::write(path, csv)?;
    }
    fs::write(&files.summary, summary)?;
    fs::write(&files.curves, render_curves(&table.curves()))?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, sweep: f64, fold: usize, acc: f64) -> ResultRow {
        ResultRow {
            method: method.into(),
            sweep_value: sweep,
            fold,
            accuracy: acc,
            mean_retrieved: sweep * 10.0,
            fallback_rate: 0.125,
            wall_clock_ms: 17 + fold as u64,
        }
    }

    #[test]
    fn csv_round_trip() {
        let table = ResultTable {
            rows: vec![row("local-linear", 2.5, 0, 0.1 + 0.2), row("local-linear", 3.0, 1, 1.0 / 3.0)],
        };
        let (mut a, mut b) = (Vec::new(), Vec::new());
        table.write_results_csv(&mut a).unwrap();
        table.write_timings_csv(&mut b).unwrap();
        let back = ResultTable::read_csv(a.as_slice(), Some(b.as_slice())).unwrap();
        assert_eq!(back, table);
    }

    #[test]
    fn single_row_csv() {
        let table = ResultTable { rows: vec![row("knn", 1.0, 0, 1.0)] };
        let mut a = Vec::new();
        table.write_results_csv(&mut a).unwrap();
        let text = String::from_utf8(a).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(text.lines().next().unwrap(), "method,sweepValue,fold,accuracy,meanRetrieved,fallbackRate");
    }

    #[test]
    fn curves_sorted_and_summarised() {
        let table = ResultTable {
            rows: vec![
                row("m", 5.0, 0, 0.6),
                row("m", 5.0, 1, 0.8),
                row("m", 1.0, 0, 0.5),
                row("m", 1.0, 1, 0.5),
            ],
        };
        let curves = table.curves();
        assert_eq!(curves[0].points[0].sweep_value, 1.0);
        assert!((curves[0].best().accuracy - 0.7).abs() < 1e-12);
        assert!(table.summary().starts_with("m: best sweep 5"));
    }

    #[test]
    fn emits_files() {
        let dir = tempfile::tempdir().unwrap();
        let table = ResultTable { rows: vec![row("knn", 1.0, 0, 1.0), row("knn", 2.0, 0, 1.0)] };
        let files = emit_reports(&table, None, dir.path()).unwrap();
        assert!(files.curves.exists());
        assert!(fs::read_to_string(&files.curves).unwrap().starts_with("<svg"));
        assert!(emit_reports(&ResultTable::default(), None, dir.path()).is_err());
    }
}

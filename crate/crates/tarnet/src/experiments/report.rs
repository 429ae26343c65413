//! Report emission: a flat records CSV, an aggregate JSON with means and
//! standard errors per cell, and a plot-ready CSV over the `sqrt(N/T)` axis.
//!
//! Files are deterministic byte for byte given the same records: columns are
//! fixed, floats are printed with 17 significant digits, and aggregate keys
//! are sorted.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiments::ResultRecord;

const RECORD_COLUMNS: &str = "experiment,n,p,r1,r2,r3,ratio,t,replication,estimator,frob_error,l2,rmse,mae,epochs,converged,non_unique,skipped,seed";

fn fmt_full(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_full).unwrap_or_default()
}

/// Flat CSV, one record per row; `wall_seconds` is intentionally omitted
/// (reruns must be byte-identical).
pub fn records_to_csv(records: &[ResultRecord]) -> String {
    let mut out = String::from(RECORD_COLUMNS);
    out.push('\n');
    for r in records {
        let skipped = r
            .skipped
            .as_deref()
            .unwrap_or("")
            .replace([',', '\n'], ";");
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.experiment,
            r.n,
            r.p,
            r.ranks.0,
            r.ranks.1,
            r.ranks.2,
            fmt_opt(r.ratio),
            r.t,
            r.replication,
            r.estimator,
            fmt_opt(r.frob_error),
            fmt_opt(r.l2),
            fmt_opt(r.rmse),
            fmt_opt(r.mae),
            r.epochs,
            r.converged,
            r.non_unique,
            skipped,
            r.seed,
        ));
    }
    out
}

/// Loads a records CSV written by [`records_to_csv`] (lossless round trip).
pub fn parse_records_csv(text: &str) -> Result<Vec<ResultRecord>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(1, "empty records file"))?;
    if header.trim_end() != RECORD_COLUMNS {
        return Err(Error::parse(1, "unexpected records header"));
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 19 {
            return Err(Error::parse(line_no, format!("expected 19 fields, got {}", f.len())));
        }
        let parse_usize = |s: &str, what: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::parse(line_no, format!("bad {what}: {s:?}")))
        };
        let parse_opt = |s: &str, what: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse()
                    .map(Some)
                    .map_err(|_| Error::parse(line_no, format!("bad {what}: {s:?}")))
            }
        };
        let parse_bool = |s: &str, what: &str| -> Result<bool> {
            s.parse()
                .map_err(|_| Error::parse(line_no, format!("bad {what}: {s:?}")))
        };
        out.push(ResultRecord {
            experiment: f[0].to_string(),
            n: parse_usize(f[1], "n")?,
            p: parse_usize(f[2], "p")?,
            ranks: (
                parse_usize(f[3], "r1")?,
                parse_usize(f[4], "r2")?,
                parse_usize(f[5], "r3")?,
            ),
            ratio: parse_opt(f[6], "ratio")?,
            t: parse_usize(f[7], "t")?,
            replication: parse_usize(f[8], "replication")?,
            estimator: f[9].to_string(),
            frob_error: parse_opt(f[10], "frob_error")?,
            l2: parse_opt(f[11], "l2")?,
            rmse: parse_opt(f[12], "rmse")?,
            mae: parse_opt(f[13], "mae")?,
            epochs: parse_usize(f[14], "epochs")?,
            converged: parse_bool(f[15], "converged")?,
            non_unique: parse_bool(f[16], "non_unique")?,
            skipped: if f[17].is_empty() {
                None
            } else {
                Some(f[17].to_string())
            },
            seed: f[18]
                .parse()
                .map_err(|_| Error::parse(line_no, format!("bad seed: {:?}", f[18])))?,
            wall_seconds: 0.0,
        });
    }
    Ok(out)
}

/// Mean and standard error accumulated in record order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub std_err: f64,
    pub count: usize,
}

fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std_err = if n > 1 {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    Summary {
        mean,
        std_err,
        count: n,
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct CellAggregate {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frob_error: Option<Summary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l2: Option<Summary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<Summary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mae: Option<Summary>,
}

fn cell_key(r: &ResultRecord) -> String {
    format!(
        "{}|{}|n={}|p={}|ranks={},{},{}|ratio={}|t={}",
        r.experiment,
        r.estimator,
        r.n,
        r.p,
        r.ranks.0,
        r.ranks.1,
        r.ranks.2,
        r.ratio.map(|x| x.to_string()).unwrap_or_default(),
        r.t
    )
}

/// Groups records by cell (experiment, estimator, grid coordinates) and
/// summarizes each metric.
pub fn aggregate(records: &[ResultRecord]) -> BTreeMap<String, CellAggregate> {
    let mut grouped: BTreeMap<String, Vec<&ResultRecord>> = BTreeMap::new();
    for r in records {
        if r.skipped.is_some() {
            continue;
        }
        grouped.entry(cell_key(r)).or_default().push(r);
    }
    let mut out = BTreeMap::new();
    for (key, rows) in grouped {
        let collect = |pick: fn(&ResultRecord) -> Option<f64>| -> Option<Summary> {
            let values: Vec<f64> = rows.iter().filter_map(|r| pick(r)).collect();
            if values.is_empty() {
                None
            } else {
                Some(summarize(&values))
            }
        };
        out.insert(
            key,
            CellAggregate {
                frob_error: collect(|r| r.frob_error),
                l2: collect(|r| r.l2),
                rmse: collect(|r| r.rmse),
                mae: collect(|r| r.mae),
            },
        );
    }
    out
}

/// Plot-ready CSV over the Figure-axes: one row per (estimator, cell) with
/// the realized `sqrt(N/T)` and the mean Frobenius error.
pub fn figure_csv(records: &[ResultRecord]) -> Option<String> {
    let relevant: Vec<&ResultRecord> = records
        .iter()
        .filter(|r| r.frob_error.is_some() && r.ratio.is_some())
        .collect();
    if relevant.is_empty() {
        return None;
    }
    let mut grouped: BTreeMap<(String, usize, usize, (usize, usize, usize), String), Vec<f64>> =
        BTreeMap::new();
    let mut ts: BTreeMap<(String, usize, usize, (usize, usize, usize), String), usize> =
        BTreeMap::new();
    for r in relevant {
        let key = (
            r.estimator.clone(),
            r.n,
            r.p,
            r.ranks,
            // Ratios sort as strings within a cell; keep the numeric value too.
            fmt_full(r.ratio.unwrap()),
        );
        grouped.entry(key.clone()).or_default().push(r.frob_error.unwrap());
        ts.insert(key, r.t);
    }
    let mut out = String::from(
        "estimator,n,p,r1,r2,r3,ratio,t,sqrt_n_over_t,mean_frob_error,std_err,count\n",
    );
    for ((est, n, p, ranks, ratio_s), values) in grouped {
        let t = ts[&(est.clone(), n, p, ranks, ratio_s.clone())];
        let s = summarize(&values);
        let realized = (n as f64 / t as f64).sqrt();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            est,
            n,
            p,
            ranks.0,
            ranks.1,
            ranks.2,
            ratio_s,
            t,
            fmt_full(realized),
            fmt_full(s.mean),
            fmt_full(s.std_err),
            s.count
        ));
    }
    Some(out)
}

/// Human-readable aggregate table, 4-decimal rounding, aligned columns.
pub fn format_aggregate_table(records: &[ResultRecord]) -> String {
    let agg = aggregate(records);
    let mut out = String::new();
    out.push_str(&format!(
        "{:<58} {:>6} {:>12} {:>12} {:>12} {:>12}\n",
        "cell", "count", "frob", "l2", "rmse", "mae"
    ));
    for (key, cell) in &agg {
        let count = cell
            .frob_error
            .or(cell.l2)
            .or(cell.rmse)
            .or(cell.mae)
            .map(|s| s.count)
            .unwrap_or(0);
        let fmt = |s: Option<Summary>| -> String {
            s.map(|v| format!("{:.4}", v.mean)).unwrap_or_else(|| "-".into())
        };
        out.push_str(&format!(
            "{:<58} {:>6} {:>12} {:>12} {:>12} {:>12}\n",
            key,
            count,
            fmt(cell.frob_error),
            fmt(cell.l2),
            fmt(cell.rmse),
            fmt(cell.mae)
        ));
    }
    let skipped: Vec<&ResultRecord> = records.iter().filter(|r| r.skipped.is_some()).collect();
    for r in skipped {
        out.push_str(&format!(
            "skipped: n={} p={} ranks={:?} t={} reason={}\n",
            r.n,
            r.p,
            r.ranks,
            r.t,
            r.skipped.as_deref().unwrap_or("")
        ));
    }
    out
}

/// Writes the records CSV, the aggregate JSON and (when Frobenius-error
/// records exist) the figure CSV. File names carry the experiment id and the
/// master seed. Returns the written paths.
pub fn emit_report(
    records: &[ResultRecord],
    dir: &Path,
    id: &str,
    master_seed: u64,
) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(Error::InvalidArgument(
            "refusing to emit a report for zero records".into(),
        ));
    }
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let records_path = dir.join(format!("{id}_seed{master_seed}_records.csv"));
    std::fs::write(&records_path, records_to_csv(records))?;
    written.push(records_path);

    let agg = aggregate(records);
    let agg_path = dir.join(format!("{id}_seed{master_seed}_aggregate.json"));
    std::fs::write(&agg_path, serde_json::to_string_pretty(&agg)?)?;
    written.push(agg_path);

    if let Some(fig) = figure_csv(records) {
        let fig_path = dir.join(format!("{id}_seed{master_seed}_figure.csv"));
        std::fs::write(&fig_path, fig)?;
        written.push(fig_path);
    }
    Ok(written)
}

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::sweep::{excluded_runs, SweepResult, SweepRow};

pub const CSV_HEADER: &str = "scale_point,keep_fraction_pct,seed,metric,parameter,value";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub scale_point: usize,
    pub keep_fraction_pct: f64,
    pub metric: String,
    pub parameter: String,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
    pub n: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub rows: Vec<AggregateRow>,
    /// Diverged or failed runs per scale point (excluded from `rows`).
    pub excluded: BTreeMap<usize, usize>,
    /// Scale points without a single completed run.
    pub missing: Vec<usize>,
}

/// Mean and sample std per (point, metric, parameter) over completed runs.
pub fn aggregate(rows: &[SweepRow]) -> Aggregate {
    let excluded_set = excluded_runs(rows);
    let mut excluded = BTreeMap::new();
    for &(p, _) in &excluded_set {
        *excluded.entry(p).or_insert(0) += 1;
    }
    let mut groups: BTreeMap<(usize, &str, &str), (f64, Vec<(u64, f64)>)> = BTreeMap::new();
    let mut points = BTreeSet::new();
    let mut completed = BTreeSet::new();
    for r in rows {
        points.insert(r.scale_point);
        if excluded_set.contains(&(r.scale_point, r.seed)) {
            continue;
        }
        completed.insert(r.scale_point);
        groups
            .entry((r.scale_point, &r.metric, &r.parameter))
            .or_insert((r.keep_fraction_pct, Vec::new()))
            .1
            .push((r.seed, r.value));
    }
    let rows = groups
        .into_iter()
        .map(|((scale_point, metric, parameter), (keep, mut vals))| {
            vals.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
            let n = vals.len();
            let mean = vals.iter().map(|v| v.1).sum::<f64>() / n as f64;
            let std = if n < 2 {
                0.0
            } else {
                (vals.iter().map(|v| (v.1 - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            };
            AggregateRow {
                scale_point,
                keep_fraction_pct: keep,
                metric: metric.to_string(),
                parameter: parameter.to_string(),
                mean,
                std,
                n,
            }
        })
        .collect();
    Aggregate {
        rows,
        excluded,
        missing: points.difference(&completed).copied().collect(),
    }
}

pub fn rows_to_csv(rows: &[SweepRow]) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.scale_point, r.keep_fraction_pct, r.seed, r.metric, r.parameter, r.value
        ));
    }
    s
}

pub fn parse_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::format(0, format!("expected header {CSV_HEADER:?}")));
    }
    let mut offset = CSV_HEADER.len() as u64 + 1;
    let mut rows = Vec::new();
    for line in lines {
        let bad = |what: &str| Error::format(offset, format!("{what} in {line:?}"));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad("expected 6 fields"));
        }
        rows.push(SweepRow {
            scale_point: f[0].parse().map_err(|_| bad("bad scale_point"))?,
            keep_fraction_pct: f[1].parse().map_err(|_| bad("bad keep_fraction_pct"))?,
            seed: f[2].parse().map_err(|_| bad("bad seed"))?,
            metric: f[3].to_string(),
            parameter: f[4].to_string(),
            value: f[5].parse().map_err(|_| bad("bad value"))?,
        });
        offset += line.len() as u64 + 1;
    }
    Ok(rows)
}

pub fn aggregate_to_csv(agg: &Aggregate) -> String {
    let mut s = String::from("scale_point,keep_fraction_pct,metric,parameter,mean,std,n\n");
    for r in &agg.rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.scale_point, r.keep_fraction_pct, r.metric, r.parameter, r.mean, r.std, r.n
        ));
    }
    s
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn emit_csv(result: &SweepResult, path: &Path) -> Result<()> {
    if result.rows.is_empty() {
        return Err(Error::Contract("no rows to emit".into()));
    }
    let mut sorted = result.clone();
    sorted.canonicalize();
    write(path, &rows_to_csv(&sorted.rows))
}

/// Writes `results.csv`, `aggregate.csv` and `summary.json` into `dir`.
pub fn write_outputs(result: &SweepResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    emit_csv(result, &dir.join("results.csv"))?;
    let agg = aggregate(&result.rows);
    write(&dir.join("aggregate.csv"), &aggregate_to_csv(&agg))?;
    let summary = serde_json::json!({
        "excluded_runs": agg.excluded,
        "missing_points": agg.missing,
        "failures": result.failures,
    });
    write(&dir.join("summary.json"), &format!("{summary:#}\n"))
}

//! Trial records, CSV emission and the report step.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::error::{fail, Result};

pub const CSV_HEADER: &str = "experiment,method,seed,step,metric,value,micros";

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub experiment: String,
    pub method: String,
    pub seed: u64,
    pub step: u64,
    pub metric: String,
    pub value: f64,
    pub micros: u64,
}

impl TrialRecord {
    pub fn new(experiment: &str, method: &str, seed: u64, step: u64, metric: &str, value: f64) -> Self {
        TrialRecord {
            experiment: experiment.to_string(),
            method: method.to_string(),
            seed,
            step,
            metric: metric.to_string(),
            value,
            micros: 0,
        }
    }

    pub fn with_micros(mut self, micros: u64) -> Self {
        self.micros = micros;
        self
    }

    fn key(&self) -> (&str, &str, u64, u64, &str) {
        (&self.experiment, &self.method, self.seed, self.step, &self.metric)
    }
}

fn check_field(field: &str) -> Result<()> {
    if field.is_empty() || field.contains([',', '\n', '\r']) {
        fail!(Format, "field {field:?} cannot be written to csv");
    }
    Ok(())
}

/// Renders records below a `# config-hash:` header. Keys must be unique.
pub fn to_csv(config_hash: &str, records: &[TrialRecord]) -> Result<String> {
    let mut seen = BTreeSet::new();
    let mut out = format!("# config-hash: {config_hash}\n{CSV_HEADER}\n");
    for r in records {
        check_field(&r.experiment)?;
        check_field(&r.method)?;
        check_field(&r.metric)?;
        if !seen.insert(r.key()) {
            fail!(
                Format,
                "duplicate record {}/{}/{}/{}/{}",
                r.experiment,
                r.method,
                r.seed,
                r.step,
                r.metric
            );
        }
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.experiment, r.method, r.seed, r.step, r.metric, r.value, r.micros
        )
        .unwrap();
    }
    Ok(out)
}

/// Parses a CSV produced by [`to_csv`], returning its config hash.
pub fn parse_csv(text: &str) -> Result<(String, Vec<TrialRecord>)> {
    let mut hash: Option<String> = None;
    let mut header_seen = false;
    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    for (no, line) in text.lines().enumerate() {
        let no = no + 1;
        if let Some(rest) = line.strip_prefix('#') {
            let Some(h) = rest.trim().strip_prefix("config-hash:") else {
                continue;
            };
            let h = h.trim().to_string();
            match &hash {
                Some(prev) if *prev != h => fail!(Report, "line {no}: mixed config hashes {prev} and {h}"),
                Some(_) => fail!(Report, "line {no}: repeated config-hash header"),
                None => hash = Some(h),
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        if line == CSV_HEADER {
            if header_seen {
                fail!(Report, "line {no}: repeated column header (concatenated files?)");
            }
            header_seen = true;
            continue;
        }
        if !header_seen {
            fail!(Report, "line {no}: data before the column header");
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            fail!(Report, "line {no}: expected 7 fields, got {}", f.len());
        }
        let num = |s: &str, what: &str| -> Result<u64> {
            s.parse().map_err(|_| crate::BenchError::Report(format!("line {no}: bad {what} {s:?}")))
        };
        let value: f64 = f[5]
            .parse()
            .map_err(|_| crate::BenchError::Report(format!("line {no}: bad value {:?}", f[5])))?;
        let r = TrialRecord {
            experiment: f[0].to_string(),
            method: f[1].to_string(),
            seed: num(f[2], "seed")?,
            step: num(f[3], "step")?,
            metric: f[4].to_string(),
            value,
            micros: num(f[6], "micros")?,
        };
        if !seen.insert((r.experiment.clone(), r.method.clone(), r.seed, r.step, r.metric.clone())) {
            fail!(Report, "line {no}: duplicate record key");
        }
        records.push(r);
    }
    let Some(hash) = hash else {
        fail!(Report, "missing config-hash header");
    };
    Ok((hash, records))
}

/// One line of the report: mean and standard error across seeds, for the
/// last step of each (experiment, method, metric) group.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub experiment: String,
    pub method: String,
    pub metric: String,
    pub step: u64,
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
}

pub fn summarize(records: &[TrialRecord]) -> Vec<ReportRow> {
    let mut last: BTreeMap<(&str, &str, &str), u64> = BTreeMap::new();
    for r in records {
        let e = last.entry((&r.experiment, &r.method, &r.metric)).or_insert(r.step);
        *e = (*e).max(r.step);
    }
    let mut groups: BTreeMap<(&str, &str, &str), Vec<f64>> = BTreeMap::new();
    for r in records {
        let k = (r.experiment.as_str(), r.method.as_str(), r.metric.as_str());
        if last[&k] == r.step {
            groups.entry(k).or_default().push(r.value);
        }
    }
    groups
        .into_iter()
        .map(|((e, m, met), v)| {
            let (mean, stderr) = mean_stderr(&v);
            ReportRow {
                experiment: e.to_string(),
                method: m.to_string(),
                metric: met.to_string(),
                step: last[&(e, m, met)],
                n: v.len(),
                mean,
                stderr,
            }
        })
        .collect()
}

/// Sample mean and standard error of the mean (0 for a single value).
pub fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn render_report(hash: &str, rows: &[ReportRow]) -> String {
    let mut out = format!("config-hash {hash}\n");
    writeln!(out, "{:<16} {:<20} {:<18} {:>8} {:>4} {:>14} {:>12}", "experiment", "method", "metric", "step", "n", "mean", "stderr").unwrap();
    for r in rows {
        writeln!(
            out,
            "{:<16} {:<20} {:<18} {:>8} {:>4} {:>14.6e} {:>12.3e}",
            r.experiment, r.method, r.metric, r.step, r.n, r.mean, r.stderr
        )
        .unwrap();
    }
    out
}

//! Summary CSV schema and the long-format report built from it.

use std::path::{Path, PathBuf};

pub const SUMMARY_HEADER: [&str; 11] =
    ["scenario_id", "method", "distribution", "N", "regions", "piA", "piB", "marb_pct", "cv_pct", "mse", "infinite_count"];
pub const REPORT_HEADER: [&str; 9] = ["scenario_id", "method", "distribution", "N", "regions", "piA", "piB", "metric", "value"];
const METRICS: [&str; 4] = ["marb_pct", "cv_pct", "mse", "infinite_count"];

/// One `(scenario, method, metric)` record. Values keep their text form.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub key: [String; 7],
    pub metric: String,
    pub value: String,
}

#[derive(Debug)]
pub enum ReportError {
    NoInput(PathBuf),
    Schema { file: PathBuf, message: String },
    Io(std::io::Error),
}

impl std::fmt::Display for ReportError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ReportError::NoInput(d) => write!(f, "no CSV files in {}", d.display()),
            ReportError::Schema { file, message } => write!(f, "{}: {message}", file.display()),
            ReportError::Io(e) => write!(f, "{e}"),
        }
    }
}

fn schema(file: &Path, message: impl Into<String>) -> ReportError {
    ReportError::Schema { file: file.to_path_buf(), message: message.into() }
}

fn check_number<T: std::str::FromStr>(file: &Path, line: u64, name: &str, v: &str) -> Result<(), ReportError> {
    v.parse::<T>().map(|_| ()).map_err(|_| schema(file, format!("line {line}: {name} is not a number: {v:?}")))
}

/// Reads a summary file or an earlier report.
pub fn read_records(file: &Path) -> Result<Vec<Record>, ReportError> {
    let mut rdr = csv::Reader::from_path(file).map_err(|e| schema(file, e.to_string()))?;
    let header: Vec<String> = rdr.headers().map_err(|e| schema(file, e.to_string()))?.iter().map(str::to_string).collect();
    let long = if header == SUMMARY_HEADER {
        false
    } else if header == REPORT_HEADER {
        true
    } else {
        return Err(schema(file, format!("unexpected header {}", header.join(","))));
    };
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| schema(file, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let key: [String; 7] = std::array::from_fn(|i| rec[i].to_string());
        check_number::<u64>(file, line, "scenario_id", &key[0])?;
        check_number::<u64>(file, line, "N", &key[3])?;
        check_number::<u64>(file, line, "regions", &key[4])?;
        check_number::<f64>(file, line, "piA", &key[5])?;
        check_number::<f64>(file, line, "piB", &key[6])?;
        if long {
            if !METRICS.contains(&&rec[7]) {
                return Err(schema(file, format!("line {line}: unknown metric {:?}", &rec[7])));
            }
            check_number::<f64>(file, line, &rec[7], &rec[8])?;
            out.push(Record { key, metric: rec[7].to_string(), value: rec[8].to_string() });
        } else {
            for (i, m) in METRICS.iter().enumerate() {
                check_number::<f64>(file, line, m, &rec[7 + i])?;
                out.push(Record { key: key.clone(), metric: m.to_string(), value: rec[7 + i].to_string() });
            }
        }
    }
    Ok(out)
}

/// Sorts by N, regions, distribution and method, then scenario and metric.
/// The sort is stable, so equal keys keep input order.
pub fn sort_records(records: &mut [Record]) {
    let num = |s: &str| s.parse::<u64>().unwrap_or(u64::MAX);
    let metric = |m: &str| METRICS.iter().position(|x| *x == m).unwrap_or(METRICS.len());
    records.sort_by(|a, b| {
        (num(&a.key[3]), num(&a.key[4]), &a.key[2], &a.key[1], num(&a.key[0]), metric(&a.metric)).cmp(&(
            num(&b.key[3]),
            num(&b.key[4]),
            &b.key[2],
            &b.key[1],
            num(&b.key[0]),
            metric(&b.metric),
        ))
    });
}

/// CSV files directly inside `dir`, in name order.
pub fn csv_files(dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(ReportError::Io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(ReportError::NoInput(dir.to_path_buf()));
    }
    Ok(files)
}

pub fn write_report<W: std::io::Write>(records: &[Record], writer: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(REPORT_HEADER)?;
    for r in records {
        w.write_record(r.key.iter().map(String::as_str).chain([r.metric.as_str(), r.value.as_str()]))?;
    }
    w.flush()
}

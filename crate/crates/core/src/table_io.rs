//! CSV input of stratified tables and CSV audit output of simulated samples.
//!
//! A two-list table has the header `stratum,n11,n10,n01` and a three-list
//! table `stratum,n111,n110,n101,n011,n100,n010,n001`. Either may add a
//! truth column (`n00_truth` or `n000_truth`), left empty when unknown.
//! Column order is free.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::simgen::{PopulationTruth, SimulatedSample};
use crate::table_model::{DualStratumCounts, StratifiedTable, TripleStratumCounts};

const DUAL: [&str; 3] = ["n11", "n10", "n01"];
const TRIPLE: [&str; 7] = ["n111", "n110", "n101", "n011", "n100", "n010", "n001"];

fn input_err(line: usize, message: impl Into<String>) -> Error {
    Error::Input { line, message: message.into() }
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim() == name)
}

fn parse_count(field: &str, name: &str, line: usize) -> Result<u64> {
    field
        .trim()
        .parse::<u64>()
        .map_err(|_| input_err(line, format!("{name} must be a nonnegative integer, got {field:?}")))
}

fn parse_truth<T: Scalar>(field: Option<&str>, name: &str, line: usize) -> Result<Option<T>> {
    match field.map(str::trim) {
        None | Some("") => Ok(None),
        Some(s) => match s.parse::<f64>() {
            Ok(v) if v >= 0.0 && v.is_finite() => Ok(Some(T::lit(v))),
            _ => Err(input_err(line, format!("{name} must be a nonnegative number, got {s:?}"))),
        },
    }
}

/// Reads a stratified table; the header decides between two and three lists.
pub fn read_table<T: Scalar, R: Read>(reader: R) -> Result<StratifiedTable<T>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(reader);
    let headers = rdr.headers().map_err(|e| input_err(1, e.to_string()))?.clone();
    let stratum = column(&headers, "stratum").ok_or_else(|| input_err(1, "missing column \"stratum\""))?;
    let triple = TRIPLE.iter().all(|c| column(&headers, c).is_some());
    let dual = DUAL.iter().all(|c| column(&headers, c).is_some());
    let (names, truth_name): (&[&str], &str) = if triple {
        (&TRIPLE, "n000_truth")
    } else if dual {
        (&DUAL, "n00_truth")
    } else {
        return Err(input_err(1, format!("header must contain stratum,{} or stratum,{}", DUAL.join(","), TRIPLE.join(","))));
    };
    let idx: Vec<usize> = names.iter().map(|c| column(&headers, c).expect("checked")).collect();
    let truth_idx = column(&headers, truth_name);

    let mut labels = Vec::new();
    let mut counts = Vec::new();
    let mut truths = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let fallback = i + 2;
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(fallback, |p| p.line() as usize);
            input_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(fallback, |p| p.line() as usize);
        let label = rec[stratum].trim().to_string();
        if label.is_empty() {
            return Err(input_err(line, "empty stratum label"));
        }
        if labels.contains(&label) {
            return Err(input_err(line, format!("duplicate stratum label {label:?}")));
        }
        let row = idx.iter().zip(names).map(|(&j, n)| parse_count(&rec[j], n, line)).collect::<Result<Vec<_>>>()?;
        truths.push(parse_truth::<T>(truth_idx.map(|j| &rec[j]), truth_name, line)?);
        labels.push(label);
        counts.push(row);
    }
    if labels.is_empty() {
        return Err(input_err(2, "table has no strata"));
    }
    if triple {
        let strata = counts
            .iter()
            .zip(&truths)
            .map(|(c, t)| {
                let s = TripleStratumCounts::new([c[0], c[1], c[2], c[3], c[4], c[5], c[6]]);
                match t {
                    Some(v) => s.with_truth(*v),
                    None => Ok(s),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        StratifiedTable::triple(strata, labels)
    } else {
        let strata = counts
            .iter()
            .zip(&truths)
            .map(|(c, t)| {
                let s = DualStratumCounts::new(c[0], c[1], c[2]);
                match t {
                    Some(v) => s.with_truth(*v),
                    None => Ok(s),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        StratifiedTable::dual(strata, labels)
    }
}

/// Writes a two-list table in the input format, truth column included
/// when every stratum carries one.
pub fn write_dual_table<T: Scalar, W: Write>(table: &StratifiedTable<T>, writer: W) -> Result<()> {
    let strata = table.as_dual().ok_or_else(|| Error::Specification("expected a two-list table".into()))?;
    let with_truth = strata.iter().all(|s| s.n00_truth.is_some());
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let mut header = vec!["stratum", "n11", "n10", "n01"];
    if with_truth {
        header.push("n00_truth");
    }
    w.write_record(&header).map_err(csv_err)?;
    for (label, s) in table.labels().iter().zip(strata) {
        let mut row = vec![label.clone(), s.n11.to_string(), s.n10.to_string(), s.n01.to_string()];
        if let Some(t) = s.n00_truth {
            row.push(t.to_string());
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Audit record of a simulated sample: observed and missed counts, true
/// region sizes and inclusion probabilities.
pub fn write_audit<W: Write>(sample: &SimulatedSample, population: &PopulationTruth, writer: W) -> Result<()> {
    let strata = sample.table.as_dual().ok_or_else(|| Error::Specification("expected a two-list sample".into()))?;
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(["stratum", "n11", "n10", "n01", "n00_truth", "Nl_truth", "piA", "piB"]).map_err(csv_err)?;
    for (l, s) in strata.iter().enumerate() {
        let reg = &population.regions[l];
        w.write_record([
            sample.table.labels()[l].clone(),
            s.n11.to_string(),
            s.n10.to_string(),
            s.n01.to_string(),
            s.n00_truth.map_or_else(String::new, |t| t.to_string()),
            sample.truth_sizes[l].to_string(),
            reg.pi_a().to_string(),
            reg.pi_b().to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

//! CSV I/O for datasets and simulation truth sidecars.
//!
//! Dataset schema: header `L,R,censor,x1..xp,w1..wd`, one row per subject,
//! `censor` in {left, interval, right}, and `R` written as the literal
//! `inf` for right-censored rows. Truth sidecar schema: `t_true,phi_true`
//! aligned row-by-row with the dataset.
//!
//! Floats are written in Rust's shortest round-trip form, so writing the
//! same data twice produces byte-identical files.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::likelihood::Observation;
use crate::simulate::SimRecord;

/// Renders a float, using the `inf` sentinel for infinity.
fn fmt_f64(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else {
        format!("{v}")
    }
}

/// Writes the file atomically: the content lands under a temporary name in
/// the same directory and is renamed into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_dataset(path: &Path, data: &[Observation]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::data("refusing to write an empty dataset"));
    }
    let p = data[0].x().len();
    let d = data[0].w().len();
    if data.iter().any(|o| o.x().len() != p || o.w().len() != d) {
        return Err(Error::data("inconsistent covariate dimensions across subjects"));
    }
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["L".to_string(), "R".to_string(), "censor".to_string()];
    header.extend((1..=p).map(|j| format!("x{j}")));
    header.extend((1..=d).map(|j| format!("w{j}")));
    wtr.write_record(&header)?;
    for obs in data {
        let mut row = vec![fmt_f64(obs.left()), fmt_f64(obs.right()), obs.censor().to_string()];
        row.extend(obs.x().iter().map(|v| fmt_f64(*v)));
        row.extend(obs.w().iter().map(|v| fmt_f64(*v)));
        wtr.write_record(&row)?;
    }
    let bytes = wtr.into_inner().map_err(|e| Error::data(e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn read_dataset(path: &Path) -> Result<Vec<Observation>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    let p = header.iter().filter(|h| h.starts_with('x')).count();
    let d = header.iter().filter(|h| h.starts_with('w')).count();
    if header.len() != 3 + p + d || header.get(0) != Some("L") || header.get(2) != Some("censor") {
        return Err(Error::data(format!("unexpected dataset header: {header:?}")));
    }
    let mut data = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 2; // 1-based, after the header line
        let record = record?;
        let parse = |field: usize| -> Result<f64> {
            record
                .get(field)
                .ok_or_else(|| Error::data(format!("row {row}: missing field {field}")))?
                .parse::<f64>()
                .map_err(|e| Error::data(format!("row {row}: {e}")))
        };
        let l = parse(0)?;
        let r = parse(1)?;
        let censor = record
            .get(2)
            .ok_or_else(|| Error::data(format!("row {row}: missing censor class")))?
            .parse()
            .map_err(|e| Error::data(format!("row {row}: {e}")))?;
        let x: Vec<f64> = (0..p).map(|j| parse(3 + j)).collect::<Result<_>>()?;
        let w: Vec<f64> = (0..d).map(|j| parse(3 + p + j)).collect::<Result<_>>()?;
        let obs = Observation::new(l, r, censor, x, w).map_err(|e| Error::data(format!("row {row}: {e}")))?;
        data.push(obs);
    }
    if data.is_empty() {
        return Err(Error::data("dataset has no rows"));
    }
    Ok(data)
}

pub fn write_truth(path: &Path, records: &[SimRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["t_true", "phi_true"])?;
    for rec in records {
        wtr.write_record([fmt_f64(rec.t_true), fmt_f64(rec.phi_true)])?;
    }
    let bytes = wtr.into_inner().map_err(|e| Error::data(e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn read_truth(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 2;
        let record = record?;
        let t = record
            .get(0)
            .and_then(|s| s.parse::<f64>().ok())
            .ok_or_else(|| Error::data(format!("truth row {row}: bad t_true")))?;
        let phi = record
            .get(1)
            .and_then(|s| s.parse::<f64>().ok())
            .ok_or_else(|| Error::data(format!("truth row {row}: bad phi_true")))?;
        out.push((t, phi));
    }
    Ok(out)
}

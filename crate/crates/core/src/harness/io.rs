//! CSV input and JSON output.
//!
//! CSV files carry a header row and one observation per row. A regression
//! dataset has a `y` column; survival data has `time` and `status` (0/1)
//! columns. Every other column is a covariate, taken in file order. Floats are
//! written in shortest round-trip form, so write-then-read is lossless.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::cox::SurvivalData;
use crate::error::{Error, Result};
use crate::likelihoods::Dataset;

fn csv_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Header names and the numeric body of a CSV file.
pub fn read_table(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header: Vec<String> = reader.headers().map_err(|e| csv_err(path, e))?.iter().map(str::to_string).collect();
    if header.is_empty() {
        return Err(csv_err(path, "missing header row"));
    }
    let mut values = Vec::new();
    let mut rows = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_err(path, e))?;
        if record.len() != header.len() {
            return Err(csv_err(path, format!("row {} has {} fields, header has {}", r + 1, record.len(), header.len())));
        }
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| csv_err(path, format!("row {}, column `{}`: `{field}` is not a number", r + 1, header[c])))?;
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(csv_err(path, "no data rows"));
    }
    Ok((header.clone(), DMatrix::from_row_slice(rows, header.len(), &values)))
}

pub fn write_table(path: &Path, header: &[String], m: &DMatrix<f64>) -> Result<()> {
    if header.len() != m.ncols() {
        return Err(Error::Dimension(format!("{} header names for {} columns", header.len(), m.ncols())));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| format!("{v}"))).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Named columns, covariate matrix and covariate names.
type Split = (Vec<DVector<f64>>, DMatrix<f64>, Vec<String>);

fn split(header: &[String], m: &DMatrix<f64>, special: &[&str], path: &Path) -> Result<Split> {
    let mut picked = Vec::new();
    for name in special {
        let idx = header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| csv_err(path, format!("missing `{name}` column")))?;
        picked.push(idx);
    }
    let covariates: Vec<usize> = (0..header.len()).filter(|c| !picked.contains(c)).collect();
    if covariates.is_empty() {
        return Err(csv_err(path, "no covariate columns"));
    }
    let x = crate::linalg::select_columns(m, &covariates);
    let cols = picked.iter().map(|&c| m.column(c).into_owned()).collect();
    let names = covariates.iter().map(|&c| header[c].clone()).collect();
    Ok((cols, x, names))
}

pub fn read_dataset(path: &Path) -> Result<(Dataset, Vec<String>)> {
    let (header, m) = read_table(path)?;
    let (cols, x, names) = split(&header, &m, &["y"], path)?;
    Ok((Dataset::new(x, cols[0].clone())?, names))
}

pub fn covariate_names(d: usize) -> Vec<String> {
    (1..=d).map(|j| format!("x{j}")).collect()
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let d = data.d();
    let mut header = covariate_names(d);
    header.push("y".into());
    let m = DMatrix::from_fn(data.n(), d + 1, |i, j| if j < d { data.x()[(i, j)] } else { data.y()[i] });
    write_table(path, &header, &m)
}

pub fn read_survival(path: &Path) -> Result<(SurvivalData, Vec<String>)> {
    let (header, m) = read_table(path)?;
    let (cols, x, names) = split(&header, &m, &["time", "status"], path)?;
    let status = cols[1]
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            if s == 1.0 {
                Ok(true)
            } else if s == 0.0 {
                Ok(false)
            } else {
                Err(csv_err(path, format!("row {}: status must be 0 or 1, got {s}", i + 1)))
            }
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok((SurvivalData::new(x, cols[0].as_slice().to_vec(), status)?, names))
}

pub fn write_survival(path: &Path, data: &SurvivalData) -> Result<()> {
    let d = data.d();
    let mut header = covariate_names(d);
    header.push("time".into());
    header.push("status".into());
    let m = DMatrix::from_fn(data.n(), d + 2, |i, j| match j {
        j if j < d => data.x()[(i, j)],
        j if j == d => data.time()[i],
        _ => f64::from(u8::from(data.status()[i])),
    });
    write_table(path, &header, &m)
}

/// Pretty-printed JSON with a trailing newline.
pub fn json_string(value: &serde_json::Value) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(json_string(value)?.as_bytes()).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_json(path: &Path) -> Result<serde_json::Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::generate::{linear, rng_for, survival, RegressionParams, SurvivalParams};

    #[test]
    fn dataset_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let p = RegressionParams { n: 25, beta: vec![1.0 / 3.0, -2.0, 1e-300], rho: 0.5, sigma: 1.0 };
        let data = linear(&p, &mut rng_for(1, 0)).unwrap();
        write_dataset(&path, &data).unwrap();
        let (back, names) = read_dataset(&path).unwrap();
        assert_eq!(back, data);
        assert_eq!(names, vec!["x1", "x2", "x3"]);
    }

    #[test]
    fn survival_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let p = SurvivalParams { n: 30, beta: vec![0.7, 0.0], rho: 0.2, baseline_hazard: 1.0, censoring_rate: 0.5 };
        let data = survival(&p, &mut rng_for(2, 0)).unwrap();
        write_survival(&path, &data).unwrap();
        assert_eq!(read_survival(&path).unwrap().0, data);
    }

    #[test]
    fn malformed_files_name_the_problem() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "x1,x2\n1,2\n").unwrap();
        assert!(read_dataset(&path).unwrap_err().to_string().contains("`y`"));
        std::fs::write(&path, "x1,y\n1,abc\n").unwrap();
        assert!(read_dataset(&path).unwrap_err().to_string().contains("abc"));
        std::fs::write(&path, "x1,time,status\n1,2,3\n").unwrap();
        assert!(read_survival(&path).unwrap_err().to_string().contains("status"));
        assert!(matches!(read_dataset(&dir.path().join("missing.csv")), Err(Error::Io { .. })));
    }
}

//! CSV ingestion with header `y,d,z,x1,...,xm`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use ivlate::Dataset;

use crate::{CliError, CliResult};

/// What was read, echoed into reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataSummary {
    pub rows: usize,
    pub columns: Vec<String>,
    /// Covariate names in design order, including the constant if added.
    pub covariates: Vec<String>,
}

/// Reads a sample from CSV. Columns `y`, `d`, `z` are required; every
/// column whose name starts with `x` is a covariate, kept in file order.
/// A constant is prepended unless `no_constant` is set. Row numbers in
/// errors count data rows from 1.
pub fn ingest_csv(path: &Path, no_constant: bool) -> CliResult<(Dataset, DataSummary)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Schema(e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();

    let position = |name: &str| -> CliResult<usize> {
        let hits: Vec<usize> = headers
            .iter()
            .enumerate()
            .filter(|(_, h)| h.as_str() == name)
            .map(|(i, _)| i)
            .collect();
        match hits.as_slice() {
            [i] => Ok(*i),
            [] => Err(CliError::Schema(format!("missing column {name:?}"))),
            _ => Err(CliError::Schema(format!("duplicate column {name:?}"))),
        }
    };
    let (iy, id, iz) = (position("y")?, position("d")?, position("z")?);
    let mut x_cols = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if h.starts_with('x') {
            if headers.iter().filter(|o| *o == h).count() > 1 {
                return Err(CliError::Schema(format!("duplicate column {h:?}")));
            }
            x_cols.push(i);
        } else if i != iy && i != id && i != iz {
            return Err(CliError::Schema(format!("unexpected column {h:?}")));
        }
    }
    if x_cols.is_empty() && no_constant {
        return Err(CliError::Schema(
            "no x columns and no constant: the covariate block would be empty".into(),
        ));
    }

    let (mut y, mut d, mut z, mut x) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| CliError::Value {
            row,
            message: e.to_string(),
        })?;
        let cell = |i: usize| -> CliResult<f64> {
            let raw = record.get(i).unwrap_or("");
            let v: f64 = raw.parse().map_err(|_| CliError::Value {
                row,
                message: format!("column {:?}: cannot parse {raw:?} as a number", headers[i]),
            })?;
            if !v.is_finite() {
                return Err(CliError::Value {
                    row,
                    message: format!("column {:?} is not finite", headers[i]),
                });
            }
            Ok(v)
        };
        let binary = |i: usize| -> CliResult<f64> {
            let v = cell(i)?;
            if v != 0.0 && v != 1.0 {
                return Err(CliError::Value {
                    row,
                    message: format!("column {:?} must be 0 or 1, found {v}", headers[i]),
                });
            }
            Ok(v)
        };
        y.push(cell(iy)?);
        d.push(binary(id)?);
        z.push(binary(iz)?);
        if !no_constant {
            x.push(1.0);
        }
        for &i in &x_cols {
            x.push(cell(i)?);
        }
    }

    let n = y.len();
    let k = x_cols.len() + usize::from(!no_constant);
    let mut covariates: Vec<String> = Vec::with_capacity(k);
    if !no_constant {
        covariates.push("(constant)".into());
    }
    covariates.extend(x_cols.iter().map(|&i| headers[i].clone()));
    let x = DMatrix::from_row_slice(n, k, &x);
    let data = Dataset::new(DVector::from_vec(y), DVector::from_vec(d), DVector::from_vec(z), x, !no_constant)
        .map_err(|e| CliError::Data(e.to_string()))?;
    Ok((
        data,
        DataSummary {
            rows: n,
            columns: headers,
            covariates,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn binds_columns_by_name() {
        let f = file("z,y,x1,d\n0,1.5,2,0\n1,2.5,3,1\n0,0.5,4,1\n1,3.0,5,0\n0,1.0,1,0\n1,2.0,0,1\n");
        let (data, summary) = ingest_csv(f.path(), false).unwrap();
        assert_eq!(data.n(), 6);
        assert_eq!(data.k(), 2);
        assert_eq!(data.y()[1], 2.5);
        assert_eq!(data.d()[2], 1.0);
        assert_eq!(data.x()[(3, 1)], 5.0);
        assert_eq!(summary.covariates, vec!["(constant)", "x1"]);
    }

    #[test]
    fn rejects_unexpected_and_duplicate_columns() {
        let f = file("y,d,z,w\n1,0,0,1\n");
        assert!(matches!(ingest_csv(f.path(), false), Err(CliError::Schema(_))));
        let f = file("y,d,z,x1,x1\n1,0,0,1,1\n");
        assert!(matches!(ingest_csv(f.path(), false), Err(CliError::Schema(_))));
    }

    #[test]
    fn non_numeric_cell_names_its_row() {
        let f = file("y,d,z\n1,0,0\n1,0,1\nabc,1,1\n");
        match ingest_csv(f.path(), false) {
            Err(CliError::Value { row, .. }) => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}

//! Flat numeric tables: CSV with header `label,x0,x1,...`.

use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reads a numeric CSV. The class count is `max(label) + 1` unless
/// `num_classes` is given.
pub fn load_numeric_csv(path: impl AsRef<Path>, num_classes: Option<usize>) -> Result<Dataset> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::DataNotFound(path.to_path_buf()));
    }
    let mut rdr =
        csv::Reader::from_path(path).map_err(|e| Error::format(path, 0, e.to_string()))?;
    let headers = rdr.headers()?.clone();
    if headers.get(0).map(str::trim) != Some("label") || headers.len() < 2 {
        return Err(Error::format(path, 0, "header must be label,x0,x1,..."));
    }
    let dim = headers.len() - 1;
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec?;
        let offset = rec.position().map_or(0, |p| p.byte());
        let label: usize = rec
            .get(0)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::format(path, offset, "label must be a nonnegative integer"))?;
        y.push(label);
        for field in rec.iter().skip(1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::format(path, offset, format!("invalid number {field:?}")))?;
            if !v.is_finite() {
                return Err(Error::format(
                    path,
                    offset,
                    format!("non-finite value {field:?}"),
                ));
            }
            x.push(v);
        }
    }
    if y.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "{} has no rows",
            path.display()
        )));
    }
    let classes = num_classes.unwrap_or_else(|| y.iter().max().map_or(1, |m| m + 1));
    Dataset::new(Tensor::new(vec![y.len(), dim], x)?, y, classes)
}

/// Writes every row flattened, labels first.
pub fn write_numeric_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, 0, e.to_string()))?;
    let dim = dataset.features().row_len();
    let mut header = vec!["label".to_string()];
    header.extend((0..dim).map(|i| format!("x{i}")));
    w.write_record(&header)?;
    for i in 0..dataset.len() {
        let mut rec = vec![dataset.labels()[i].to_string()];
        rec.extend(dataset.features().row(i).iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_classification;

    #[test]
    fn round_trip_is_exact() {
        let (ds, _) = synth_classification(7, 3, 3, 2.0, 4);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_numeric_csv(&ds, &p).unwrap();
        assert_eq!(load_numeric_csv(&p, Some(3)).unwrap(), ds);
    }

    #[test]
    fn malformed_rows_report_offsets() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        std::fs::write(&p, "label,x0\n0,1.5\n1,abc\n").unwrap();
        match load_numeric_csv(&p, None) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 15),
            other => panic!("{other:?}"),
        }
        std::fs::write(&p, "y,x0\n0,1\n").unwrap();
        assert!(matches!(
            load_numeric_csv(&p, None),
            Err(Error::Format { offset: 0, .. })
        ));
    }
}

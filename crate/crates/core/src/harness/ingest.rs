//! CSV datasets: one example per row, a binary group column and numeric
//! feature columns.

use std::path::Path;

use crate::domain::Group;
use crate::error::{AuditError, Result};
use crate::harness::generate::{uniform_domain, Dataset};

fn row_err(line: u64, msg: impl Into<String>) -> AuditError {
    AuditError::Parse { line: line as usize, msg: msg.into() }
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| AuditError::InvalidInput(format!("no column named {name}")))
}

pub fn ingest_csv(path: impl AsRef<Path>, group_column: &str, feature_columns: &[String]) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| AuditError::InvalidInput(e.to_string()))?;
    let headers = reader.headers().map_err(|e| row_err(1, e.to_string()))?.clone();
    let g_idx = column(&headers, group_column)?;
    let f_idx = feature_columns.iter().map(|c| column(&headers, c)).collect::<Result<Vec<_>>>()?;
    let mut groups = Vec::new();
    let mut features = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            row_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| -> Result<&str> {
            match record.get(i).map(str::trim) {
                Some(s) if !s.is_empty() => Ok(s),
                _ => Err(row_err(line, format!("missing value in column {}", &headers[i]))),
            }
        };
        let group = match field(g_idx)? {
            "0" => Group::Zero,
            "1" => Group::One,
            other => return Err(row_err(line, format!("group must be 0 or 1, got {other}"))),
        };
        let row = f_idx
            .iter()
            .map(|&i| {
                let s = field(i)?;
                s.parse::<f64>().map_err(|_| row_err(line, format!("column {}: not a number: {s}", &headers[i])))
            })
            .collect::<Result<Vec<f64>>>()?;
        groups.push(group);
        features.push(row);
    }
    if groups.is_empty() {
        return Err(AuditError::InvalidInput("no data rows".into()));
    }
    Ok(Dataset { domain: uniform_domain(&groups)?, features })
}

/// Writes the dataset back with a `group` column followed by `f0, f1, ...`.
pub fn write_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| AuditError::InvalidInput(e.to_string()))?;
    let dim = dataset.features.first().map_or(0, Vec::len);
    let mut header = vec!["group".to_string()];
    header.extend((0..dim).map(|j| format!("f{j}")));
    w.write_record(&header).map_err(|e| AuditError::InvalidInput(e.to_string()))?;
    for (e, row) in dataset.domain.examples().iter().zip(&dataset.features) {
        let mut rec = vec![e.group.bit().to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| AuditError::InvalidInput(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), text).unwrap();
        f
    }

    #[test]
    fn uniform_within_group() {
        let f = write("g,a,b\n1,0.5,1\n1,1.5,2\n0,2,3\n0,3,4\n");
        let ds = ingest_csv(f.path(), "g", &["a".into(), "b".into()]).unwrap();
        assert_eq!(ds.domain.pi1(), 0.5);
        assert!(ds.domain.examples().iter().all(|e| e.mass() == 0.5));
        assert_eq!(ds.features[1], vec![1.5, 2.0]);
    }

    #[test]
    fn missing_value_reports_row() {
        let f = write("g,a\n1,0.5\n0,\n");
        match ingest_csv(f.path(), "g", &["a".into()]) {
            Err(AuditError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn single_group_is_rejected() {
        let f = write("g,a\n1,0.5\n1,1\n");
        assert!(matches!(ingest_csv(f.path(), "g", &["a".into()]), Err(AuditError::InvalidInput(_))));
    }

    #[test]
    fn round_trip_preserves_masses() {
        let f = write("g,a\n1,0.5\n0,1\n0,2\n");
        let ds = ingest_csv(f.path(), "g", &["a".into()]).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        write_csv(&ds, out.path()).unwrap();
        let again = ingest_csv(out.path(), "group", &["f0".into()]).unwrap();
        for (a, b) in ds.domain.examples().iter().zip(again.domain.examples()) {
            assert!((a.p0 - b.p0).abs() <= 1e-12 && (a.p1 - b.p1).abs() <= 1e-12);
        }
        assert_eq!(ds.features, again.features);
    }
}

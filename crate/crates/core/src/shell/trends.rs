//! MPKI trend CSV interchange: header `cores,mpki`, one row per sample,
//! raw (unnormalized) values.

use super::ShellError;
use std::path::Path;

pub fn write_trend_csv(path: &Path, raw: &[(u32, f64)]) -> Result<(), ShellError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| ShellError::Csv {
        path: path.display().to_string(),
        source: e,
    })?;
    w.write_record(["cores", "mpki"]).map_err(|e| ShellError::Csv {
        path: path.display().to_string(),
        source: e,
    })?;
    for &(cores, mpki) in raw {
        w.write_record([cores.to_string(), mpki.to_string()])
            .map_err(|e| ShellError::Csv {
                path: path.display().to_string(),
                source: e,
            })?;
    }
    w.flush().map_err(|e| ShellError::io(path, e))?;
    Ok(())
}

pub fn read_trend_csv(path: &Path) -> Result<Vec<(u32, f64)>, ShellError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| ShellError::Csv {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut out = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| ShellError::Csv {
            path: path.display().to_string(),
            source: e,
        })?;
        let cores: u32 = record
            .get(0)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| ShellError::Validation(format!("{}: bad cores field", path.display())))?;
        let mpki: f64 = record
            .get(1)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| ShellError::Validation(format!("{}: bad mpki field", path.display())))?;
        out.push((cores, mpki));
    }
    if out.is_empty() {
        return Err(ShellError::Validation(format!(
            "{}: trend file holds no samples",
            path.display()
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trend_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let raw = vec![(1u32, 12.5f64), (8, 3.25), (64, 0.01)];
        write_trend_csv(&path, &raw).unwrap();
        assert_eq!(read_trend_csv(&path).unwrap(), raw);
    }
}

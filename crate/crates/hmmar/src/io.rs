//! File formats: series CSV with 17-significant-digit decimals, and atomic
//! output writes (temporary file in the target directory, renamed on
//! success).

use std::io::Write;
use std::path::Path;

use crate::error::{HmmError, Result};

/// 17 significant digits, enough to round-trip any finite f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes `content` to `path` atomically.
pub fn write_atomic(path: &Path, content: &str) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(content.as_bytes())?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| HmmError::Io(e.error))?;
    Ok(())
}

/// Series CSV: header `y` (plus `z` when a latent path is included), one
/// observation per line.
pub fn series_to_csv(values: &[f64], regimes: Option<&[usize]>) -> String {
    let mut out = String::new();
    match regimes {
        None => {
            out.push_str("y\n");
            for y in values {
                out.push_str(&fmt_f64(*y));
                out.push('\n');
            }
        }
        Some(z) => {
            out.push_str("y,z\n");
            for (y, z) in values.iter().zip(z) {
                out.push_str(&fmt_f64(*y));
                out.push(',');
                out.push_str(&z.to_string());
                out.push('\n');
            }
        }
    }
    out
}

/// Parses a series CSV, ignoring any latent column.
pub fn series_from_csv(text: &str) -> Result<Vec<f64>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| HmmError::Parse("empty series file".to_string()))?;
    let first = header.split(',').next().unwrap_or("").trim();
    if first != "y" {
        return Err(HmmError::Parse(format!("expected header starting with 'y', got '{header}'")));
    }
    let mut values = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let field = line.split(',').next().unwrap().trim();
        let y: f64 = field
            .parse()
            .map_err(|_| HmmError::Parse(format!("line {}: bad number '{field}'", lineno + 2)))?;
        values.push(y);
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_round_trip_exact() {
        let values = vec![1.0 / 3.0, -2.5e-17, 1234.5678, f64::MIN_POSITIVE];
        let text = series_to_csv(&values, None);
        assert_eq!(series_from_csv(&text).unwrap(), values);
    }

    #[test]
    fn latent_column_round_trip() {
        let values = vec![0.5, -0.25];
        let text = series_to_csv(&values, Some(&[1, 0]));
        assert!(text.starts_with("y,z\n"));
        assert_eq!(series_from_csv(&text).unwrap(), values);
    }

    #[test]
    fn scientific_notation_accepted() {
        assert_eq!(series_from_csv("y\n1.5e-3\n").unwrap(), vec![1.5e-3]);
    }

    #[test]
    fn bad_header_rejected() {
        assert!(series_from_csv("x\n1.0\n").is_err());
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        write_atomic(&path, "first").unwrap();
        write_atomic(&path, "second").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "second");
    }
}

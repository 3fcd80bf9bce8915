use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::Failure;

pub const SIGNIFICANT_DIGITS: usize = 15;

/// Decimal rendering with `SIGNIFICANT_DIGITS` significant digits.
pub fn format_sig(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if !(-5..=15).contains(&exp) {
        return format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x);
    }
    let decimals = (SIGNIFICANT_DIGITS as i32 - 1 - exp).max(0) as usize;
    format!("{x:.decimals$}")
}

pub fn to_json<T: serde::Serialize>(value: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(value).map_err(|e| Failure::internal(e.to_string()))
}

/// Checks that `path` can be created: its directory exists and it is not a
/// directory itself.
pub fn check_output_path(flag: &'static str, path: &Path) -> Result<(), Failure> {
    if path.is_dir() {
        return Err(Failure::usage(
            flag,
            format!("{} is a directory", path.display()),
        ));
    }
    let parent = parent_dir(path);
    if !parent.is_dir() {
        return Err(Failure::usage(
            flag,
            format!("directory {} does not exist", parent.display()),
        ));
    }
    Ok(())
}

pub fn check_input_path(flag: &'static str, path: &Path) -> Result<(), Failure> {
    if !path.is_file() {
        return Err(Failure::usage(
            flag,
            format!("{} is not a readable file", path.display()),
        ));
    }
    Ok(())
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Writes to a temporary file next to `path`, then renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), Failure> {
    let fail = |e: std::io::Error| Failure::internal(format!("writing {}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(parent_dir(path)).map_err(fail)?;
    tmp.write_all(contents).map_err(fail)?;
    tmp.as_file().sync_all().map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}

/// JSON to `path` when given, otherwise to stdout.
pub fn emit(json: &str, path: Option<&Path>) -> Result<(), Failure> {
    match path {
        Some(p) => {
            write_atomic(p, format!("{json}\n").as_bytes())?;
            eprintln!("wrote {}", p.display());
        }
        None => println!("{json}"),
    }
    Ok(())
}

/// Reads a square matrix from a headerless CSV file.
pub fn read_matrix(flag: &'static str, path: &Path) -> Result<DMatrix<f64>, Failure> {
    let bad = |msg: String| Failure::usage(flag, format!("{}: {msg}", path.display()));
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| bad(e.to_string()))?;
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| {
                    bad(format!(
                        "row {}, column {}: {field:?} is not a number",
                        i + 1,
                        j + 1
                    ))
                })?;
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 || values.len() != rows * rows {
        return Err(bad(format!(
            "expected a square matrix, got {} entries in {rows} rows",
            values.len()
        )));
    }
    Ok(DMatrix::from_row_slice(rows, rows, &values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digits() {
        assert_eq!(format_sig(0.5), "0.500000000000000");
        assert_eq!(format_sig(123.25), "123.250000000000");
        assert_eq!(format_sig(0.0), "0");
        assert!(format_sig(1e-9).contains('e'));
        let x = 0.991_374_123_456_789_1;
        let back: f64 = format_sig(x).parse().unwrap();
        assert!((back - x).abs() < 1e-14);
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.json");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn rejects_missing_directory() {
        let e = check_output_path("--output", Path::new("/no/such/dir/x.json")).unwrap_err();
        assert!(e.message.contains("--output"));
    }
}

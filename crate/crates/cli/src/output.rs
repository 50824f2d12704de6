//! CSV and JSON emission.
//!
//! Floats are written with Rust's shortest round-trip formatting, so
//! parsing a cell back with `str::parse::<f64>` returns the same bits.
//! Non-finite values appear as `NaN`, `inf` or `-inf`.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::CliError;

pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let err = |e: csv::Error| CliError::Runtime(format!("writing {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.write_record(row).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))
}

pub fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::Runtime(format!("creating {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, 1e-6, 10.0, 5e-324, f64::MAX, -0.0, 123456789.12345679] {
            let back: f64 = fmt_f64(v).parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits());
        }
        assert!(fmt_f64(f64::NAN).parse::<f64>().unwrap().is_nan());
        assert_eq!(fmt_f64(f64::INFINITY).parse::<f64>().unwrap(), f64::INFINITY);
        assert_eq!(fmt_opt(None), "");
    }
}

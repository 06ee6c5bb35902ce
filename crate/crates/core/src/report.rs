//! Output helpers: CSV formatting and report files.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;

/// Nine significant digits, the precision used for every CSV column.
pub fn fmt_sig(v: f64) -> String {
    format!("{v:.8e}")
}

/// Writes a CSV file from a header and rows of numbers.
pub fn write_csv_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> io::Result<()> {
    let mut w = io::BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| fmt_sig(*v)).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()
}

/// Pretty JSON with full round-trip float precision.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    fs::write(path, text + "\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_sig(1.0 / 3.0), "3.33333333e-1");
        assert_eq!(fmt_sig(-1234.5), "-1.23450000e3");
    }
}

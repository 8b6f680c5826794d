//! CSV and JSON writers shared by every module.
//!
//! Numbers are written in scientific notation with 17 significant digits so
//! that every `f64` round-trips exactly. Outputs carry no timestamps, so equal
//! inputs produce byte-identical files.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

/// `{:.16e}`, the shortest fixed-width format that round-trips an `f64`.
pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes a header and numeric rows. Row lengths must match the header.
pub fn write_csv<P, I>(path: P, header: &[&str], rows: I) -> io::Result<()>
where
    P: AsRef<Path>,
    I: IntoIterator<Item = Vec<f64>>,
{
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(header)?;
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        writer.write_record(row.iter().map(|&v| format_value(v)))?;
    }
    writer.flush()
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<P: AsRef<Path>, T: Serialize>(path: P, value: &T) -> io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()
}

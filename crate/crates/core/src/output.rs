//! Report files. Text outputs carry the config hash; CSVs start with a
//! `# config_hash=<hex>` comment line.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::dynamics::VisitTrace;

pub fn write_csv<R, I>(path: &Path, config_hash: &str, header: &[&str], rows: R) -> io::Result<()>
where
    R: IntoIterator<Item = I>,
    I: IntoIterator,
    I::Item: AsRef<[u8]>,
{
    let mut f = BufWriter::new(File::create(path)?);
    writeln!(f, "# config_hash={config_hash}")?;
    let mut w = csv::Writer::from_writer(f);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> io::Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    f.flush()
}

/// Row-major `[chain][checkpoint]` little-endian f64, no header.
pub fn partial_sums_bytes(sums: &[Vec<f64>]) -> Vec<u8> {
    sums.iter().flatten().flat_map(|x| x.to_le_bytes()).collect()
}

pub fn read_partial_sums(bytes: &[u8], n_checkpoints: usize) -> io::Result<Vec<Vec<f64>>> {
    let row = 8 * n_checkpoints;
    if n_checkpoints == 0 || bytes.len() % row != 0 {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "partial-sum dump length does not match the checkpoint count"));
    }
    Ok(bytes
        .chunks(row)
        .map(|r| r.chunks(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect())
        .collect())
}

/// One [`VisitTrace`] per line.
pub fn write_traces<'a>(path: &Path, traces: impl IntoIterator<Item = &'a VisitTrace>) -> io::Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    for t in traces {
        serde_json::to_writer(&mut f, t)?;
        writeln!(f)?;
    }
    f.flush()
}

/// Reads the hash back from a CSV written by [`write_csv`].
pub fn csv_config_hash(text: &str) -> Option<&str> {
    text.lines().next()?.strip_prefix("# config_hash=")
}

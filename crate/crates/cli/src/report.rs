use std::path::Path;

use serde::Serialize;

/// Bumped whenever a column is added, removed or renamed.
pub const SCHEMA_VERSION: u32 = 1;

/// Fixed six-decimal rendering; non-finite values and negative zero are
/// normalized so output is identical across platforms.
pub fn num(x: f64) -> String {
    if !x.is_finite() {
        return "NA".into();
    }
    let s = format!("{x:.6}");
    if s == "-0.000000" {
        "0.000000".into()
    } else {
        s
    }
}

pub fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".into(), num)
}

pub fn opt_usize(x: Option<usize>) -> String {
    x.map_or_else(|| "NA".into(), |v| v.to_string())
}

/// A CSV table held in memory until written.
#[derive(Debug, Clone)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Table { header: header.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write(&self, path: &Path) -> Result<(), String> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)
            .map_err(|e| format!("{}: {e}", path.display()))?;
        let err = |e: csv::Error| format!("{}: {e}", path.display());
        w.write_record(&self.header).map_err(err)?;
        for r in &self.rows {
            w.write_record(r).map_err(err)?;
        }
        w.flush().map_err(|e| format!("{}: {e}", path.display()))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SiteError {
    pub site_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Counts {
    pub total: usize,
    pub ok: usize,
    pub all_rejected: usize,
    pub excluded: usize,
    pub failed: usize,
}

#[derive(Debug, Serialize)]
pub struct RunMeta<'a, C: Serialize> {
    pub schema_version: u32,
    pub mode: &'a str,
    pub version: &'a str,
    pub seed: u64,
    pub null_table_checksum: Option<String>,
    pub config: &'a C,
    pub sites: Counts,
    pub errors: Vec<SiteError>,
    pub excluded: Vec<SiteError>,
    pub files: Vec<&'a str>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| e.to_string())?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| format!("{}: {e}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_are_stable() {
        assert_eq!(num(-1e-9), "0.000000");
        assert_eq!(num(f64::NAN), "NA");
        assert_eq!(num(2.5), "2.500000");
        assert_eq!(opt(None), "NA");
    }
}

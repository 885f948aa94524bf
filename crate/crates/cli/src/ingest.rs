use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use chrono::{Datelike, NaiveDate};

/// A record's time stamp: a calendar day or a bare year.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stamp {
    Year(i32),
    Day(NaiveDate),
}

impl fmt::Display for Stamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stamp::Year(y) => write!(f, "{y}"),
            Stamp::Day(d) => write!(f, "{}", d.format("%Y-%m-%d")),
        }
    }
}

fn parse_stamp(s: &str) -> Option<Stamp> {
    let s = s.trim();
    if s.len() == 4 && s.bytes().all(|b| b.is_ascii_digit()) {
        return s.parse().ok().map(Stamp::Year);
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d").ok().map(Stamp::Day)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiteSeries {
    pub site_id: String,
    /// Strictly increasing stamps with finite values.
    pub records: Vec<(Stamp, f64)>,
    /// Records with a missing value; they count against completeness.
    pub missing: usize,
}

impl SiteSeries {
    pub fn is_annual(&self) -> bool {
        matches!(self.records.first(), Some((Stamp::Year(_), _)))
    }
}

#[derive(Debug)]
pub struct IngestError {
    pub problems: Vec<String>,
}

impl fmt::Display for IngestError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, p) in self.problems.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{p}")?;
        }
        Ok(())
    }
}

impl std::error::Error for IngestError {}

const MAX_REPORTED: usize = 50;

/// Read a `site_id,date,value` file. Dates are `YYYY-MM-DD` or bare years
/// (one kind per site); `NA` or an empty value marks a missing record.
/// Sites keep the order of their first appearance.
pub fn ingest(path: &Path) -> Result<Vec<SiteSeries>, IngestError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| IngestError { problems: vec![format!("{}: {e}", path.display())] })?;
    ingest_str(&text)
}

pub fn ingest_str(text: &str) -> Result<Vec<SiteSeries>, IngestError> {
    let fail = |p: String| IngestError { problems: vec![p] };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| fail(format!("line 1: {e}")))?.clone();
    let names: Vec<&str> = headers.iter().collect();
    if names != ["site_id", "date", "value"] {
        return Err(fail(format!("line 1: expected header 'site_id,date,value', found '{}'", names.join(","))));
    }
    let mut problems = Vec::new();
    let mut order: Vec<String> = Vec::new();
    let mut by_site: HashMap<String, (Vec<(Stamp, Option<f64>, u64)>, bool)> = HashMap::new();
    for rec in rdr.records() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                problems.push(format!("line {}: {e}", e.position().map_or(0, |p| p.line())));
                continue;
            }
        };
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 3 {
            problems.push(format!("line {line}: expected 3 fields, found {}", rec.len()));
            continue;
        }
        let site = &rec[0];
        if site.is_empty() {
            problems.push(format!("line {line}: empty site_id"));
            continue;
        }
        let Some(stamp) = parse_stamp(&rec[1]) else {
            problems.push(format!("line {line}: cannot parse date '{}'", &rec[1]));
            continue;
        };
        let value = match &rec[2] {
            "" | "NA" | "NaN" | "nan" => None,
            v => match v.parse::<f64>() {
                Ok(x) if x.is_finite() => Some(x),
                _ => {
                    problems.push(format!("line {line}: value '{v}' is not a finite number"));
                    continue;
                }
            },
        };
        let entry = by_site.entry(site.to_string()).or_insert_with(|| {
            order.push(site.to_string());
            (Vec::new(), matches!(stamp, Stamp::Year(_)))
        });
        if entry.1 != matches!(stamp, Stamp::Year(_)) {
            problems.push(format!("line {line}: site '{site}' mixes bare years and calendar dates"));
            continue;
        }
        entry.0.push((stamp, value, line));
    }
    if order.is_empty() && problems.is_empty() {
        return Err(fail("file has no records".into()));
    }
    let mut out = Vec::with_capacity(order.len());
    for site in order {
        let (mut recs, _) = by_site.remove(&site).unwrap();
        recs.sort_by_key(|r| (r.0, r.2));
        for w in recs.windows(2) {
            if w[0].0 == w[1].0 {
                problems.push(format!("line {}: duplicate record for site '{site}' at {} (first at line {})", w[1].2, w[1].0, w[0].2));
            }
        }
        let missing = recs.iter().filter(|r| r.1.is_none()).count();
        let records = recs.into_iter().filter_map(|(s, v, _)| v.map(|v| (s, v))).collect();
        out.push(SiteSeries { site_id: site, records, missing });
    }
    if !problems.is_empty() {
        let extra = problems.len().saturating_sub(MAX_REPORTED);
        problems.truncate(MAX_REPORTED);
        if extra > 0 {
            problems.push(format!("... and {extra} more problems"));
        }
        return Err(IngestError { problems });
    }
    Ok(out)
}

/// Months kept in each block, inclusive. A window that wraps the year end
/// (start month after end month) is labelled by the year it ends in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct Season {
    pub start: u32,
    pub end: u32,
}

impl Season {
    fn wraps(&self) -> bool {
        self.start > self.end
    }

    fn contains(&self, month: u32) -> bool {
        if self.wraps() {
            month >= self.start || month <= self.end
        } else {
            (self.start..=self.end).contains(&month)
        }
    }

    /// Block label of a day, or `None` when it falls outside the window.
    pub fn block_of(&self, d: NaiveDate) -> Option<i32> {
        if !self.contains(d.month()) {
            return None;
        }
        Some(if self.wraps() && d.month() >= self.start { d.year() + 1 } else { d.year() })
    }

    /// Calendar days in the block with the given label.
    pub fn days_in_block(&self, label: i32) -> i64 {
        let first_year = if self.wraps() { label - 1 } else { label };
        let first = NaiveDate::from_ymd_opt(first_year, self.start, 1).unwrap();
        let (ny, nm) = if self.end == 12 { (label + 1, 1) } else { (label, self.end + 1) };
        let after = NaiveDate::from_ymd_opt(ny, nm, 1).unwrap();
        (after - first).num_days()
    }
}

impl std::str::FromStr for Season {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b) = s.split_once('-').ok_or_else(|| format!("season must look like MM-MM, got '{s}'"))?;
        let m = |v: &str| v.parse::<u32>().ok().filter(|m| (1..=12).contains(m));
        match (m(a), m(b)) {
            (Some(start), Some(end)) => Ok(Season { start, end }),
            _ => Err(format!("season months must be in 1..=12, got '{s}'")),
        }
    }
}

/// A site's observations grouped into blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Blocked {
    /// Values in time order, with the label of the block each belongs to.
    pub values: Vec<f64>,
    pub labels: Vec<i64>,
    /// Kept blocks in order with their completeness.
    pub blocks: Vec<(i64, f64)>,
    pub dropped_blocks: usize,
}

impl Blocked {
    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Largest value of each kept block.
    pub fn maxima(&self) -> Vec<(i64, f64)> {
        let mut out: Vec<(i64, f64)> = Vec::new();
        for (&v, &l) in self.values.iter().zip(&self.labels) {
            match out.last_mut() {
                Some((lab, m)) if *lab == l => *m = m.max(v),
                _ => out.push((l, v)),
            }
        }
        out
    }
}

/// Group a series into blocks and drop blocks below `min_completeness`.
/// Annual records form one block each with completeness 1.
pub fn block_series(series: &SiteSeries, season: Season, min_completeness: f64) -> Blocked {
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut counts: Vec<(i64, usize)> = Vec::new();
    for &(stamp, v) in &series.records {
        let label = match stamp {
            Stamp::Year(y) => y as i64,
            Stamp::Day(d) => match season.block_of(d) {
                Some(l) => l as i64,
                None => continue,
            },
        };
        values.push(v);
        labels.push(label);
        match counts.last_mut() {
            Some((l, c)) if *l == label => *c += 1,
            _ => counts.push((label, 1)),
        }
    }
    let annual = series.is_annual();
    let mut keep = HashMap::new();
    let mut blocks = Vec::new();
    let mut dropped = 0;
    for (label, c) in counts {
        let completeness = if annual { 1.0 } else { c as f64 / season.days_in_block(label as i32) as f64 };
        let ok = completeness >= min_completeness;
        keep.insert(label, ok);
        if ok {
            blocks.push((label, completeness));
        } else {
            dropped += 1;
        }
    }
    let (values, labels) = values.into_iter().zip(labels).filter(|(_, l)| keep[l]).unzip();
    Blocked { values, labels, blocks, dropped_blocks: dropped }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_rows_one_site() {
        let s = ingest_str("site_id,date,value\nA,2000-01-01,1.5\nA,2000-01-02,2\n").unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].records.len(), 2);
    }

    #[test]
    fn duplicates_are_rejected_with_lines() {
        let e = ingest_str("site_id,date,value\nA,2000-01-01,1\nB,2000-01-01,1\nA,2000-01-01,2\n").unwrap_err();
        assert_eq!(e.problems.len(), 1);
        assert!(e.problems[0].contains("line 4"), "{}", e.problems[0]);
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let e = ingest_str("site_id,date,value\nA,2000-13-01,1\nA,2000-01-02,x\nA,2000-01-03\n").unwrap_err();
        assert_eq!(e.problems.len(), 3);
        for (p, l) in e.problems.iter().zip(["line 2", "line 3", "line 4"]) {
            assert!(p.starts_with(l), "{p}");
        }
        assert!(ingest_str("site_id,date,value\n").is_err());
        assert!(ingest_str("").is_err());
    }

    #[test]
    fn years_are_annual_blocks() {
        let s = ingest_str("site_id,date,value\nA,1991,3\nA,1990,2\n").unwrap();
        assert!(s[0].is_annual());
        assert_eq!(s[0].records[0].0, Stamp::Year(1990));
        let b = block_series(&s[0], Season { start: 1, end: 12 }, 0.9);
        assert_eq!(b.blocks, vec![(1990, 1.0), (1991, 1.0)]);
    }

    #[test]
    fn winter_season_wraps() {
        let w: Season = "11-03".parse().unwrap();
        let d = |y, m, dd| NaiveDate::from_ymd_opt(y, m, dd).unwrap();
        assert_eq!(w.block_of(d(1999, 12, 5)), Some(2000));
        assert_eq!(w.block_of(d(2000, 2, 5)), Some(2000));
        assert_eq!(w.block_of(d(2000, 6, 5)), None);
        assert_eq!(w.days_in_block(2000), 30 + 31 + 31 + 29 + 31);
        assert_eq!(Season { start: 1, end: 12 }.days_in_block(2001), 365);
    }
}

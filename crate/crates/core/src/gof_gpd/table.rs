//! Monte Carlo null tables for the Anderson-Darling and Cramer-von Mises
//! statistics of a fitted GPD.
//!
//! Binary layout, all integers and floats little-endian:
//!
//! ```text
//! offset  size               field
//! 0       8                  magic "EVKNULL\0"
//! 8       4  u32             format version (1)
//! 12      4  u32             n_stats
//! 16      4  u32             n_shapes
//! 20      4  u32             n_percentiles
//! 24      8  u64             Monte Carlo replicates per shape
//! 32      8  u64             Monte Carlo sample size
//! 40      8  u64             seed
//! 48      4*n_stats          statistic ids (0 = AD, 1 = CVM)
//! ..      8*n_shapes         shape grid, f64
//! ..      8*n_percentiles    upper-tail probabilities, f64, descending
//! ..      8*n_shapes         fit failures per shape, u64
//! ..      8*n_stats*n_shapes*n_percentiles
//!                            critical values, f64, row-major: statistic,
//!                            then shape, then percentile
//! ```

use std::path::Path;
use std::sync::OnceLock;

use rayon::prelude::*;

use super::{edf_statistics, EdfStatistic};
use crate::dist::{sample_gpd, GpdParams};
use crate::error::{Error, Result};
use crate::estimation::fit_gpd_mle;
use crate::rng::{derive_seed, stream_rng};

const MAGIC: &[u8; 8] = b"EVKNULL\0";
const VERSION: u32 = 1;

/// Environment variable naming a table file that replaces the embedded one.
pub const NULL_TABLE_ENV: &str = "EVKIT_NULL_TABLE";

static EMBEDDED: &[u8] = include_bytes!("../../assets/gpd_null_table.bin");

/// Lower and upper percentiles of the tail regression window.
const TAIL_WINDOW: (f64, f64) = (0.001, 0.05);
/// p-value returned for statistics below the first stored critical value.
pub const PVALUE_CEILING: f64 = 0.999;

#[derive(Debug, Clone, PartialEq)]
pub struct NullTable {
    pub shape_grid: Vec<f64>,
    /// Upper-tail probabilities, descending.
    pub percentile_grid: Vec<f64>,
    pub ad: Vec<f64>,
    pub cvm: Vec<f64>,
    pub mc_replicates: u64,
    pub mc_sample_size: u64,
    pub seed: u64,
    pub fit_failures: Vec<u64>,
}

/// Exponential tail `log p = intercept - slope * stat` beyond the last
/// stored critical value of one row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailFit {
    pub intercept: f64,
    pub slope: f64,
}

/// Shapes -0.5, -0.4, ..., 1.0.
pub fn default_shape_grid() -> Vec<f64> {
    (0..16).map(|i| (i as f64 - 5.0) / 10.0).collect()
}

/// Upper-tail probabilities 0.999, 0.998, ..., 0.001.
pub fn default_percentile_grid() -> Vec<f64> {
    (0..999).map(|j| (999 - j) as f64 / 1000.0).collect()
}

fn type7_quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    if lo + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

/// Simulate the null distribution of both statistics on the default grids.
pub fn build_null_table(mc_replicates: usize, mc_sample_size: usize, seed: u64) -> Result<NullTable> {
    build_null_table_on(&default_shape_grid(), mc_replicates, mc_sample_size, seed)
}

/// As [`build_null_table`] with a custom shape grid.
pub fn build_null_table_on(shapes: &[f64], mc_replicates: usize, mc_sample_size: usize, seed: u64) -> Result<NullTable> {
    if mc_replicates < 1000 {
        return Err(Error::InvalidParameter(format!("need at least 1000 replicates, got {mc_replicates}")));
    }
    if mc_sample_size < 20 {
        return Err(Error::InvalidParameter(format!("sample size {mc_sample_size} is too small")));
    }
    if shapes.is_empty() || shapes.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("shape grid must be strictly increasing".into()));
    }
    let pct = default_percentile_grid();
    let mut ad = Vec::with_capacity(shapes.len() * pct.len());
    let mut cvm = Vec::with_capacity(shapes.len() * pct.len());
    let mut fit_failures = Vec::with_capacity(shapes.len());
    for (s, &xi) in shapes.iter().enumerate() {
        let truth = GpdParams::new(1.0, xi)?;
        let base = derive_seed(seed, s as u64);
        let reps: Vec<Option<(f64, f64)>> = (0..mc_replicates as u64)
            .into_par_iter()
            .map(|k| {
                let y = sample_gpd(mc_sample_size, &truth, &mut stream_rng(base, k));
                let fit = fit_gpd_mle(&y).ok().filter(|f| f.converged)?;
                let (a, w, _) = edf_statistics(&y, &fit.gpd()?);
                Some((a, w))
            })
            .collect();
        let mut a: Vec<f64> = reps.iter().flatten().map(|v| v.0).collect();
        let mut w: Vec<f64> = reps.iter().flatten().map(|v| v.1).collect();
        fit_failures.push((mc_replicates - a.len()) as u64);
        if a.len() < 100 {
            return Err(Error::Convergence(format!("too many failed fits at shape {xi}")));
        }
        a.sort_by(f64::total_cmp);
        w.sort_by(f64::total_cmp);
        for &p in &pct {
            ad.push(type7_quantile(&a, 1.0 - p));
        }
        for &p in &pct {
            cvm.push(type7_quantile(&w, 1.0 - p));
        }
    }
    Ok(NullTable {
        shape_grid: shapes.to_vec(),
        percentile_grid: pct,
        ad,
        cvm,
        mc_replicates: mc_replicates as u64,
        mc_sample_size: mc_sample_size as u64,
        seed,
        fit_failures,
    })
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::NullTable("truncated table file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))).collect()
    }
}

impl NullTable {
    /// The table shipped with the crate, or the file named by
    /// `EVKIT_NULL_TABLE` when that variable is set. Loaded once.
    pub fn default_table() -> Result<&'static NullTable> {
        static TABLE: OnceLock<std::result::Result<NullTable, String>> = OnceLock::new();
        TABLE
            .get_or_init(|| match std::env::var_os(NULL_TABLE_ENV) {
                Some(path) => NullTable::read(Path::new(&path)).map_err(|e| e.to_string()),
                None => NullTable::from_bytes(EMBEDDED).map_err(|e| e.to_string()),
            })
            .as_ref()
            .map_err(|e| Error::NullTable(e.clone()))
    }

    /// The embedded table, ignoring the environment.
    pub fn embedded() -> Result<NullTable> {
        NullTable::from_bytes(EMBEDDED)
    }

    pub fn n_shapes(&self) -> usize {
        self.shape_grid.len()
    }

    pub fn shape_range(&self) -> (f64, f64) {
        (self.shape_grid[0], self.shape_grid[self.shape_grid.len() - 1])
    }

    /// Critical values for one statistic at grid shape `s`, ascending.
    pub fn row(&self, stat: EdfStatistic, s: usize) -> &[f64] {
        let np = self.percentile_grid.len();
        let all = match stat {
            EdfStatistic::AndersonDarling => &self.ad,
            EdfStatistic::CramerVonMises => &self.cvm,
        };
        &all[s * np..(s + 1) * np]
    }

    /// Critical value at an exact grid point.
    pub fn critical_value(&self, stat: EdfStatistic, s: usize, upper_p: f64) -> Option<f64> {
        let j = self.percentile_grid.iter().position(|&p| (p - upper_p).abs() < 1e-12)?;
        Some(self.row(stat, s)[j])
    }

    /// Least squares fit of `-log p` on the critical values over the tail
    /// window, constrained through the last node so the extrapolated
    /// p-value joins the interpolated one continuously.
    pub fn tail_fit(&self, stat: EdfStatistic, s: usize) -> TailFit {
        let row = self.row(stat, s);
        let last = row.len() - 1;
        let (cl, yl) = (row[last], -self.percentile_grid[last].ln());
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for (j, &p) in self.percentile_grid.iter().enumerate() {
            if p >= TAIL_WINDOW.0 - 1e-12 && p <= TAIL_WINDOW.1 + 1e-12 && j != last {
                let dx = row[j] - cl;
                sxy += dx * (-p.ln() - yl);
                sxx += dx * dx;
            }
        }
        let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
        TailFit { intercept: slope * cl - yl, slope }
    }

    /// `-log p` for one row.
    fn neg_log_p_row(&self, stat: EdfStatistic, s: usize, x: f64) -> f64 {
        let row = self.row(stat, s);
        let pct = &self.percentile_grid;
        let last = row.len() - 1;
        if x <= row[0] {
            return -PVALUE_CEILING.ln();
        }
        if x > row[last] {
            let t = self.tail_fit(stat, s);
            return t.slope * x - t.intercept;
        }
        // first node with row[j] >= x
        let j = row.partition_point(|&c| c < x);
        let (c0, c1) = (row[j - 1], row[j]);
        let (l0, l1) = (pct[j - 1].ln(), pct[j].ln());
        if c1 <= c0 {
            return -l1;
        }
        -(l0 + (x - c0) / (c1 - c0) * (l1 - l0))
    }

    /// p-value of `stat` at estimated shape `xi_hat`: log-linear
    /// interpolation within a row, exponential tail beyond the last node,
    /// and linear interpolation of `-log p` between neighbouring shapes.
    pub fn p_value(&self, which: EdfStatistic, stat: f64, xi_hat: f64) -> Result<f64> {
        let (lo, hi) = self.shape_range();
        if !(xi_hat >= lo - 1e-12 && xi_hat <= hi + 1e-12) {
            return Err(Error::OutOfTableRange { xi: xi_hat, lo, hi });
        }
        if !stat.is_finite() {
            return Err(Error::InvalidInput("statistic is not finite".into()));
        }
        let g = &self.shape_grid;
        let k = g.partition_point(|&v| v < xi_hat).clamp(1, g.len().max(2) - 1);
        if g.len() == 1 {
            return Ok((-self.neg_log_p_row(which, 0, stat)).exp().min(PVALUE_CEILING));
        }
        let w = ((xi_hat - g[k - 1]) / (g[k] - g[k - 1])).clamp(0.0, 1.0);
        let y = (1.0 - w) * self.neg_log_p_row(which, k - 1, stat) + w * self.neg_log_p_row(which, k, stat);
        Ok((-y).exp().min(PVALUE_CEILING))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let np = self.percentile_grid.len();
        let mut out = Vec::with_capacity(64 + 8 * (2 * self.ad.len() + np + 2 * self.n_shapes()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&2u32.to_le_bytes());
        out.extend_from_slice(&(self.n_shapes() as u32).to_le_bytes());
        out.extend_from_slice(&(np as u32).to_le_bytes());
        out.extend_from_slice(&self.mc_replicates.to_le_bytes());
        out.extend_from_slice(&self.mc_sample_size.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        out.extend_from_slice(&1u32.to_le_bytes());
        for v in self.shape_grid.iter().chain(&self.percentile_grid) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.fit_failures {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.ad.iter().chain(&self.cvm) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<NullTable> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::NullTable("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::NullTable(format!("unsupported version {version}")));
        }
        let n_stats = r.u32()? as usize;
        let ns = r.u32()? as usize;
        let np = r.u32()? as usize;
        let mc_replicates = r.u64()?;
        let mc_sample_size = r.u64()?;
        let seed = r.u64()?;
        let ids: Vec<u32> = (0..n_stats).map(|_| r.u32()).collect::<Result<_>>()?;
        if ids != [0, 1] {
            return Err(Error::NullTable(format!("expected statistics [0, 1], found {ids:?}")));
        }
        if ns == 0 || np < 2 {
            return Err(Error::NullTable("empty grid".into()));
        }
        let shape_grid = r.f64s(ns)?;
        let percentile_grid = r.f64s(np)?;
        let fit_failures = (0..ns).map(|_| r.u64()).collect::<Result<_>>()?;
        let ad = r.f64s(ns * np)?;
        let cvm = r.f64s(ns * np)?;
        if r.pos != buf.len() {
            return Err(Error::NullTable("trailing bytes".into()));
        }
        let t = NullTable { shape_grid, percentile_grid, ad, cvm, mc_replicates, mc_sample_size, seed, fit_failures };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        if self.shape_grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::NullTable("shape grid is not increasing".into()));
        }
        if self.percentile_grid.windows(2).any(|w| !(w[1] < w[0])) || self.percentile_grid.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::NullTable("percentile grid must be descending in (0, 1)".into()));
        }
        for stat in [EdfStatistic::AndersonDarling, EdfStatistic::CramerVonMises] {
            for s in 0..self.n_shapes() {
                let row = self.row(stat, s);
                if row.iter().any(|v| !v.is_finite()) || row.windows(2).any(|w| w[1] < w[0]) {
                    return Err(Error::NullTable(format!("row {s} is not monotone")));
                }
            }
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<NullTable> {
        NullTable::from_bytes(&std::fs::read(path)?)
    }

    /// FNV-1a hash of the serialized table, as 16 hex digits.
    pub fn checksum(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.to_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

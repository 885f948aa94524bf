//! Stopping rules for ordered hypotheses and the drivers that choose the
//! number of order statistics or a threshold from a sequence of tests.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::TopROrderSample;
use crate::error::{Error, Result};
use crate::gof_gevr::{ed_test, score_test_multiplier, score_test_parametric, TestOutcome};
use crate::gof_gpd::{edf_test, moran_test, rao_score_test, EdfStatistic, NullTable, OutOfRange};
use crate::rng::derive_seed;

const P_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StoppingRule {
    ForwardStop,
    StrongStop,
    Unadjusted,
}

impl StoppingRule {
    pub fn as_str(&self) -> &'static str {
        match self {
            StoppingRule::ForwardStop => "forward-stop",
            StoppingRule::StrongStop => "strong-stop",
            StoppingRule::Unadjusted => "unadjusted",
        }
    }

    pub fn apply(&self, p: &[f64], alpha: f64) -> Result<usize> {
        match self {
            StoppingRule::ForwardStop => forward_stop(p, alpha),
            StoppingRule::StrongStop => strong_stop(p, alpha),
            StoppingRule::Unadjusted => Ok(unadjusted_stop(p, alpha)),
        }
    }
}

impl std::str::FromStr for StoppingRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward-stop" | "forwardstop" | "forward" => Ok(StoppingRule::ForwardStop),
            "strong-stop" | "strongstop" | "strong" => Ok(StoppingRule::StrongStop),
            "unadjusted" | "none" => Ok(StoppingRule::Unadjusted),
            _ => Err(Error::InvalidInput(format!("unknown stopping rule '{s}'"))),
        }
    }
}

fn check_p(p: &[f64], alpha: f64) -> Result<()> {
    if p.is_empty() {
        return Err(Error::InvalidInput("empty p-value sequence".into()));
    }
    if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidInput("p-values must lie in [0, 1]".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must be in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// Running means `-(1/k) sum_{i<=k} log(1 - p_i)`.
pub fn forward_stop_path(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    p.iter()
        .enumerate()
        .map(|(i, &v)| {
            acc -= (1.0 - v).max(P_FLOOR).ln();
            acc / (i + 1) as f64
        })
        .collect()
}

fn strong_stop_log_path(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut out = vec![0.0; m];
    let mut acc = 0.0;
    for j in (0..m).rev() {
        acc += p[j].max(P_FLOOR).ln() / (j + 1) as f64;
        out[j] = acc;
    }
    out
}

/// `exp(sum_{j>=k} log(p_j) / j)` for each `k`.
pub fn strong_stop_path(p: &[f64]) -> Vec<f64> {
    strong_stop_log_path(p).into_iter().map(f64::exp).collect()
}

/// Largest `k` whose ForwardStop statistic is at most `alpha`; 0 if none.
pub fn forward_stop(p: &[f64], alpha: f64) -> Result<usize> {
    check_p(p, alpha)?;
    Ok(forward_stop_path(p).iter().rposition(|&v| v <= alpha).map_or(0, |k| k + 1))
}

/// Largest `k` with `exp(sum_{j>=k} log(p_j)/j) <= alpha k / m`; 0 if none.
pub fn strong_stop(p: &[f64], alpha: f64) -> Result<usize> {
    check_p(p, alpha)?;
    let m = p.len() as f64;
    let path = strong_stop_log_path(p);
    Ok(path.iter().enumerate().rposition(|(k, &v)| v <= (alpha * (k + 1) as f64 / m).ln()).map_or(0, |k| k + 1))
}

/// Number of leading p-values at or below `alpha`.
pub fn unadjusted_stop(p: &[f64], alpha: f64) -> usize {
    p.iter().position(|&v| !(v <= alpha)).unwrap_or(p.len())
}

/// Rejection counts for one p-value sequence under every rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KHat {
    pub forward_stop: usize,
    pub strong_stop: usize,
    pub unadjusted: usize,
}

impl KHat {
    pub fn get(&self, rule: StoppingRule) -> usize {
        match rule {
            StoppingRule::ForwardStop => self.forward_stop,
            StoppingRule::StrongStop => self.strong_stop,
            StoppingRule::Unadjusted => self.unadjusted,
        }
    }
}

/// The p-value sequence in testing order, the statistics of both adjusted
/// rules along it, and the number of rejections under each rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequentialSelection {
    pub raw_p: Vec<f64>,
    pub forwardstop_path: Vec<f64>,
    pub strongstop_path: Vec<f64>,
    pub k_hat: KHat,
    pub alpha: f64,
    pub rule: StoppingRule,
    pub warnings: Vec<String>,
}

impl SequentialSelection {
    pub fn new(p: &[f64], rule: StoppingRule, alpha: f64) -> Result<Self> {
        let k_hat = KHat {
            forward_stop: forward_stop(p, alpha)?,
            strong_stop: strong_stop(p, alpha)?,
            unadjusted: unadjusted_stop(p, alpha),
        };
        Ok(SequentialSelection {
            raw_p: p.to_vec(),
            forwardstop_path: forward_stop_path(p),
            strongstop_path: strong_stop_path(p),
            k_hat,
            alpha,
            rule,
            warnings: Vec::new(),
        })
    }

    /// Rejections under the selected rule.
    pub fn rejections(&self) -> usize {
        self.k_hat.get(self.rule)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RTest {
    EntropyDifference,
    ScoreParametric,
    ScoreMultiplier,
}

impl std::str::FromStr for RTest {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ed" => Ok(RTest::EntropyDifference),
            "score-pb" | "pb" => Ok(RTest::ScoreParametric),
            "score-mb" | "mb" => Ok(RTest::ScoreMultiplier),
            _ => Err(Error::InvalidInput(format!("unknown r-selection test '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RSelection {
    /// p-values ordered from depth `R` down to depth 1, as the rules see them.
    pub selection: SequentialSelection,
    /// Outcome of the test at depth `r` in slot `r - 1`; `None` where it failed.
    pub tests: Vec<Option<TestOutcome>>,
    pub failures: Vec<(usize, String)>,
    /// `R - k_hat`; 0 when every depth, including 1, is rejected.
    pub chosen_r: usize,
}

/// Run the test of GEV_r at every depth `r = 1..=r_max`, order the p-values
/// from `r_max` down to 1 and apply the stopping rule. Rejecting `k`
/// hypotheses selects `r = r_max - k`.
///
/// The entropy-difference test needs two columns, so with `RTest::EntropyDifference`
/// the depth-1 hypothesis is tested with the parametric score test.
pub fn select_r(
    sample: &TopROrderSample,
    r_max: usize,
    test: RTest,
    rule: StoppingRule,
    alpha: f64,
    bootstrap: usize,
    seed: u64,
) -> Result<RSelection> {
    if r_max == 0 || r_max > sample.r() {
        return Err(Error::InvalidParameter(format!("r_max must be in 1..={}, got {r_max}", sample.r())));
    }
    let outcomes: Vec<Result<TestOutcome>> = (1..=r_max)
        .into_par_iter()
        .map(|r| {
            let sub = sample.truncate(r)?;
            let s = derive_seed(seed, r as u64);
            match test {
                RTest::EntropyDifference if r >= 2 => ed_test(&sub),
                RTest::EntropyDifference | RTest::ScoreParametric => score_test_parametric(&sub, bootstrap, s),
                RTest::ScoreMultiplier => score_test_multiplier(&sub, bootstrap, s),
            }
        })
        .collect();
    let mut failures = Vec::new();
    let mut tests = Vec::with_capacity(r_max);
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(t) => tests.push(Some(t)),
            Err(e) => {
                failures.push((i + 1, e.to_string()));
                tests.push(None);
            }
        }
    }
    // reversed order, up to the first failure
    let mut p = Vec::with_capacity(r_max);
    for t in tests.iter().rev() {
        match t {
            Some(t) => p.push(t.p_value),
            None => break,
        }
    }
    if p.is_empty() {
        return Err(Error::Convergence(format!("test at r = {r_max} failed: {}", failures.last().map_or("", |f| &f.1))));
    }
    let mut selection = SequentialSelection::new(&p, rule, alpha)?;
    if p.len() < r_max {
        selection.warnings.push(format!(
            "tests failed at r = {:?}; rule applied to depths {}..={r_max}",
            failures.iter().map(|f| f.0).collect::<Vec<_>>(),
            r_max - p.len() + 1
        ));
    }
    let chosen_r = r_max - selection.rejections();
    Ok(RSelection { selection, tests, failures, chosen_r })
}

/// Candidate thresholds with the number of observations above each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdGrid {
    pub thresholds: Vec<f64>,
    pub counts: Vec<usize>,
}

impl ThresholdGrid {
    pub fn new(data: &[f64], thresholds: &[f64]) -> Result<Self> {
        if thresholds.is_empty() {
            return Err(Error::InvalidInput("empty threshold grid".into()));
        }
        if thresholds.iter().any(|t| !t.is_finite()) || thresholds.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("thresholds must be finite and strictly increasing".into()));
        }
        let counts = thresholds.iter().map(|&u| data.iter().filter(|&&y| y > u).count()).collect();
        Ok(ThresholdGrid { thresholds: thresholds.to_vec(), counts })
    }

    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }
}

fn type7(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Thresholds at the 75th to 97th percentiles in steps of 2, then the 97.1th
/// to 99.5th in steps of 0.1; repeated values are kept once.
pub fn percentile_threshold_grid(data: &[f64]) -> Result<ThresholdGrid> {
    let mut x: Vec<f64> = data.iter().copied().filter(|v| v.is_finite()).collect();
    if x.is_empty() {
        return Err(Error::InsufficientData("no finite observations".into()));
    }
    x.sort_by(f64::total_cmp);
    let mut pct: Vec<f64> = (0..12).map(|i| 75.0 + 2.0 * i as f64).collect();
    pct.extend((1..=25).map(|i| (970 + i) as f64 / 10.0));
    let mut u: Vec<f64> = pct.iter().map(|p| type7(&x, p / 100.0)).collect();
    u.dedup();
    ThresholdGrid::new(data, &u)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdTest {
    AndersonDarling,
    CramerVonMises,
    Moran,
    RaoScore,
}

impl std::str::FromStr for ThresholdTest {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ad" => Ok(ThresholdTest::AndersonDarling),
            "cvm" => Ok(ThresholdTest::CramerVonMises),
            "moran" => Ok(ThresholdTest::Moran),
            "rao" | "score" => Ok(ThresholdTest::RaoScore),
            _ => Err(Error::InvalidInput(format!("unknown threshold test '{s}'"))),
        }
    }
}

/// Settings for [`select_threshold`] beyond the rule.
#[derive(Debug, Clone, Copy)]
pub struct ThresholdOptions<'a> {
    pub table: &'a NullTable,
    /// Parametric bootstrap size used when an AD/CVM fit falls outside the
    /// table; 0 treats such a threshold as a failed test.
    pub bootstrap: usize,
    pub seed: u64,
    /// Interior thresholds of the Rao test, placed at sample quantiles.
    pub rao_intervals: usize,
    pub min_exceedances: usize,
}

impl<'a> ThresholdOptions<'a> {
    pub fn new(table: &'a NullTable) -> Self {
        ThresholdOptions { table, bootstrap: 0, seed: 0, rao_intervals: 9, min_exceedances: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSelection {
    pub grid: ThresholdGrid,
    pub selection: SequentialSelection,
    pub tests: Vec<Option<TestOutcome>>,
    pub failures: Vec<(usize, String)>,
    /// Index into the grid of the first threshold that is not rejected;
    /// `None` when every tested threshold is rejected.
    pub chosen_index: Option<usize>,
    pub chosen_threshold: Option<f64>,
}

/// Test the GPD fit at each threshold of the grid, in ascending order, and
/// apply the stopping rule. Rejecting `k` thresholds selects the `k + 1`th.
pub fn select_threshold(
    data: &[f64],
    grid: &ThresholdGrid,
    test: ThresholdTest,
    rule: StoppingRule,
    alpha: f64,
    opts: &ThresholdOptions,
) -> Result<ThresholdSelection> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty threshold grid".into()));
    }
    let outcomes: Vec<Result<TestOutcome>> = grid
        .thresholds
        .par_iter()
        .enumerate()
        .map(|(i, &u)| {
            let y: Vec<f64> = data.iter().filter(|&&v| v > u).map(|v| v - u).collect();
            if y.len() < opts.min_exceedances {
                return Err(Error::InsufficientData(format!("{} exceedances above {u}", y.len())));
            }
            let fallback = if opts.bootstrap > 0 {
                OutOfRange::Bootstrap { replicates: opts.bootstrap, seed: derive_seed(opts.seed, i as u64) }
            } else {
                OutOfRange::Fail
            };
            match test {
                ThresholdTest::AndersonDarling => edf_test(&y, EdfStatistic::AndersonDarling, opts.table, fallback),
                ThresholdTest::CramerVonMises => edf_test(&y, EdfStatistic::CramerVonMises, opts.table, fallback),
                ThresholdTest::Moran => moran_test(&y),
                ThresholdTest::RaoScore => rao_score_test(&y, opts.rao_intervals),
            }
        })
        .collect();
    let mut failures = Vec::new();
    let mut tests = Vec::with_capacity(grid.len());
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(t) => tests.push(Some(t)),
            Err(e) => {
                failures.push((i, e.to_string()));
                tests.push(None);
            }
        }
    }
    let p: Vec<f64> = tests.iter().map_while(|t| t.as_ref().map(|t| t.p_value)).collect();
    if p.is_empty() {
        return Err(Error::Convergence(format!(
            "test failed at the lowest threshold: {}",
            failures.first().map_or("", |f| &f.1)
        )));
    }
    let mut selection = SequentialSelection::new(&p, rule, alpha)?;
    if p.len() < grid.len() {
        selection.warnings.push(format!("rule applied to the first {} of {} thresholds", p.len(), grid.len()));
    }
    let k = selection.rejections();
    let chosen_index = if k < p.len() { Some(k) } else { None };
    Ok(ThresholdSelection {
        grid: grid.clone(),
        chosen_threshold: chosen_index.map(|i| grid.thresholds[i]),
        selection,
        tests,
        failures,
        chosen_index,
    })
}

/// Largest values per block after storm declustering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Declustered {
    /// Block labels with a full row, in order of first appearance.
    pub blocks: Vec<i64>,
    pub rows: Vec<Vec<f64>>,
    /// Blocks that yielded fewer than `r` values.
    pub short_blocks: Vec<i64>,
}

impl Declustered {
    pub fn to_sample(&self) -> Result<TopROrderSample> {
        TopROrderSample::from_rows(&self.rows)
    }
}

/// In each block take the largest remaining value, then drop every
/// observation within `tau / 2` positions of it, until `r` values are
/// extracted. Positions are observation indices in `series`; `blocks`
/// labels each observation and must be contiguous. Non-finite values are
/// never picked, and a value equal to one already taken is discarded so
/// rows are strictly decreasing.
pub fn decluster_top_r(series: &[f64], blocks: &[i64], r: usize, tau: f64) -> Result<Declustered> {
    if series.len() != blocks.len() {
        return Err(Error::InvalidInput("series and block labels differ in length".into()));
    }
    if r == 0 || !(tau >= 0.0) {
        return Err(Error::InvalidParameter("need r >= 1 and tau >= 0".into()));
    }
    let half = tau / 2.0;
    let mut out = Declustered { blocks: Vec::new(), rows: Vec::new(), short_blocks: Vec::new() };
    let mut seen = std::collections::HashSet::new();
    let mut start = 0;
    while start < series.len() {
        let label = blocks[start];
        let mut end = start;
        while end < series.len() && blocks[end] == label {
            end += 1;
        }
        if !seen.insert(label) {
            return Err(Error::InvalidInput(format!("block {label} is not contiguous")));
        }
        let mut alive: Vec<bool> = series[start..end].iter().map(|v| v.is_finite()).collect();
        let mut row: Vec<f64> = Vec::with_capacity(r);
        while row.len() < r {
            let Some((i, v)) = alive
                .iter()
                .enumerate()
                .filter(|(_, &a)| a)
                .map(|(i, _)| (i, series[start + i]))
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
            else {
                break;
            };
            if row.last().map_or(true, |&last| v < last) {
                row.push(v);
                for (j, a) in alive.iter_mut().enumerate() {
                    if (j as f64 - i as f64).abs() <= half {
                        *a = false;
                    }
                }
            } else {
                alive[i] = false;
            }
        }
        if row.len() == r {
            out.blocks.push(label);
            out.rows.push(row);
        } else {
            out.short_blocks.push(label);
        }
        start = end;
    }
    Ok(out)
}

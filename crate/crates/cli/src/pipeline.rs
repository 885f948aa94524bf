use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use evkit::estimation::{fit_gevr_mle, fit_gpd_mle, fit_rfa, LinkedModelSpec, Method};
use evkit::inference::{
    delta_ci, gev_return_level, gpd_return_level, profile_likelihood_ci, rfa_return_level, semiparametric_bootstrap,
    IntervalMethod, ProfileData, ReturnLevelEstimate, Target,
};
use evkit::rng::derive_seed;
use evkit::sequential::{
    decluster_top_r, percentile_threshold_grid, select_r, select_threshold, RTest, SequentialSelection, StoppingRule,
    ThresholdGrid, ThresholdOptions, ThresholdTest,
};
use evkit::simkit::quantile_threshold_grid;
use evkit::{FitResult, NullTable};

use crate::ingest::{block_series, ingest, Season, SiteSeries};
use crate::report::{num, opt, opt_usize, write_json, Counts, RunMeta, SiteError, Table, SCHEMA_VERSION};
use crate::{CommonArgs, RfaArgs, SelectRArgs, ThresholdArgs};

pub enum Outcome {
    Complete,
    SiteFailures(usize),
}

#[derive(Debug, Clone)]
enum Status {
    Ok,
    AllRejected(String),
    Excluded(String),
    Failed(String),
}

impl Status {
    fn label(&self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::AllRejected(_) => "all_rejected",
            Status::Excluded(_) => "excluded",
            Status::Failed(_) => "failed",
        }
    }

    fn reason(&self) -> String {
        match self {
            Status::Ok => String::new(),
            Status::AllRejected(r) | Status::Excluded(r) | Status::Failed(r) => r.clone(),
        }
    }
}

#[derive(Debug, Default)]
struct SiteOutput {
    status: Option<Status>,
    /// Columns after `site_id,status,reason`.
    summary: Vec<String>,
    returns: Vec<Vec<String>>,
    pvalues: Vec<Vec<String>>,
    traces: Vec<Vec<String>>,
}

/// Seed for a site from the global seed and the site id.
pub fn site_seed(seed: u64, site_id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in site_id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    derive_seed(seed, h)
}

struct Prepared {
    season: Season,
    rule: StoppingRule,
    sites: Vec<SiteSeries>,
}

fn prepare(c: &CommonArgs) -> Result<Prepared, String> {
    if !(c.alpha > 0.0 && c.alpha < 1.0) {
        return Err(format!("--alpha must be in (0, 1), got {}", c.alpha));
    }
    if !(c.level > 0.0 && c.level < 1.0) {
        return Err(format!("--level must be in (0, 1), got {}", c.level));
    }
    if c.periods.is_empty() || c.periods.iter().any(|&t| !(t > 1.0)) {
        return Err("--periods must all exceed 1".into());
    }
    if !(0.0..=1.0).contains(&c.min_completeness) {
        return Err(format!("--min-completeness must be in [0, 1], got {}", c.min_completeness));
    }
    let season: Season = c.season.parse()?;
    let rule: StoppingRule = c.rule.parse().map_err(|e: evkit::Error| e.to_string())?;
    let sites = ingest(&c.input).map_err(|e| format!("cannot read {}:\n{e}", c.input.display()))?;
    std::fs::create_dir_all(&c.out).map_err(|e| format!("{}: {e}", c.out.display()))?;
    Ok(Prepared { season, rule, sites })
}

fn method_label(m: IntervalMethod) -> &'static str {
    match m {
        IntervalMethod::None => "none",
        IntervalMethod::Delta => "delta",
        IntervalMethod::Profile => "profile",
        IntervalMethod::Bootstrap => "bootstrap",
    }
}

fn return_row(site: &str, period: f64, r: &ReturnLevelEstimate) -> Vec<String> {
    vec![site.into(), num(period), num(r.estimate), opt(r.ci_low), opt(r.ci_high), method_label(r.method).into()]
}

/// Profile interval, falling back to the delta method and then to the
/// point estimate alone.
fn interval(data: ProfileData, fit: &FitResult, target: &Target, level: f64, point: f64) -> ReturnLevelEstimate {
    profile_likelihood_ci(data, fit, target, level).or_else(|_| delta_ci(fit, target, level)).unwrap_or(ReturnLevelEstimate {
        target: *target,
        estimate: point,
        ci_low: None,
        ci_high: None,
        level,
        method: IntervalMethod::None,
        conditioning: Vec::new(),
        notes: vec!["no interval could be computed".into()],
    })
}

fn params_and_se(fit: Option<&FitResult>, k: usize) -> Vec<String> {
    let Some(fit) = fit.filter(|f| f.converged) else {
        return vec!["NA".into(); 2 * k];
    };
    let x: Vec<f64> = match (fit.gev(), fit.gpd()) {
        (Some(p), _) => vec![p.loc, p.scale, p.shape],
        (_, Some(p)) => vec![p.scale, p.shape],
        _ => vec![f64::NAN; k],
    };
    let se = fit.std_errors().unwrap_or_else(|| vec![f64::NAN; k]);
    (0..k).flat_map(|i| [num(x[i]), num(se[i])]).collect()
}

fn rejected_flag(sel: &SequentialSelection, position: usize) -> String {
    if position >= sel.raw_p.len() {
        "NA".into()
    } else if position < sel.rejections() {
        "1".into()
    } else {
        "0".into()
    }
}

struct Batch<'a> {
    mode: &'a str,
    out: &'a Path,
    site_header: &'static [&'static str],
    return_header: Option<&'static [&'static str]>,
    pvalue_header: Option<&'static [&'static str]>,
    trace_header: Option<&'static [&'static str]>,
}

fn finish<C: serde::Serialize>(
    b: &Batch,
    ids: &[String],
    outputs: Vec<SiteOutput>,
    extra: Vec<(&'static str, Table)>,
    config: &C,
    seed: u64,
    checksum: Option<String>,
) -> Result<Outcome, String> {
    let mut sites = Table::new(b.site_header);
    let mut returns = b.return_header.map(Table::new);
    let mut pvalues = b.pvalue_header.map(Table::new);
    let mut traces = b.trace_header.map(Table::new);
    let mut counts = Counts { total: ids.len(), ..Counts::default() };
    let mut errors = Vec::new();
    let mut excluded = Vec::new();
    for (id, o) in ids.iter().zip(outputs) {
        let status = o.status.unwrap_or(Status::Failed("no result".into()));
        match &status {
            Status::Ok => counts.ok += 1,
            Status::AllRejected(_) => counts.all_rejected += 1,
            Status::Excluded(r) => {
                counts.excluded += 1;
                excluded.push(SiteError { site_id: id.clone(), reason: r.clone() });
            }
            Status::Failed(r) => {
                counts.failed += 1;
                errors.push(SiteError { site_id: id.clone(), reason: r.clone() });
            }
        }
        let mut row = vec![id.clone(), status.label().into(), status.reason()];
        row.extend(o.summary);
        row.resize(b.site_header.len(), "NA".into());
        sites.push(row);
        for (t, rows) in [(&mut returns, o.returns), (&mut pvalues, o.pvalues), (&mut traces, o.traces)] {
            if let Some(t) = t.as_mut() {
                rows.into_iter().for_each(|r| t.push(r));
            }
        }
    }
    let mut files = vec!["sites.csv"];
    sites.write(&b.out.join("sites.csv"))?;
    for (name, t) in [("return_levels.csv", returns), ("pvalues.csv", pvalues), ("traces.csv", traces)] {
        if let Some(t) = t {
            t.write(&b.out.join(name))?;
            files.push(name);
        }
    }
    for (name, t) in &extra {
        t.write(&b.out.join(name))?;
        files.push(name);
    }
    files.push("run.json");
    let failed = counts.failed;
    let meta = RunMeta {
        schema_version: SCHEMA_VERSION,
        mode: b.mode,
        version: env!("CARGO_PKG_VERSION"),
        seed,
        null_table_checksum: checksum,
        config,
        sites: counts,
        errors,
        excluded,
        files,
    };
    write_json(&b.out.join("run.json"), &meta)?;
    Ok(if failed == 0 { Outcome::Complete } else { Outcome::SiteFailures(failed) })
}

fn table_checksum() -> Option<String> {
    NullTable::default_table().ok().map(|t| t.checksum())
}

const RETURN_HEADER: &[&str] = &["site_id", "period", "estimate", "ci_low", "ci_high", "interval"];

pub fn run_select_r(a: &SelectRArgs) -> Result<Outcome, String> {
    let test: RTest = a.test.parse().map_err(|e: evkit::Error| e.to_string())?;
    if a.rmax == 0 {
        return Err("--rmax must be at least 1".into());
    }
    if !(a.tau >= 0.0) {
        return Err("--tau must be non-negative".into());
    }
    if a.bootstrap == 0 {
        return Err("--bootstrap must be positive".into());
    }
    let c = &a.common;
    let prep = prepare(c)?;
    let outputs: Vec<SiteOutput> = prep.sites.par_iter().map(|s| select_r_site(s, a, test, &prep)).collect();
    let ids: Vec<String> = prep.sites.iter().map(|s| s.site_id.clone()).collect();
    let batch = Batch {
        mode: "select-r",
        out: &c.out,
        site_header: &[
            "site_id", "status", "reason", "n_blocks", "chosen_r", "loc", "loc_se", "scale", "scale_se", "shape", "shape_se",
        ],
        return_header: Some(RETURN_HEADER),
        pvalue_header: Some(&["site_id", "r", "statistic", "p_value", "forwardstop", "strongstop", "rejected"]),
        trace_header: Some(&["site_id", "r", "loc", "loc_se", "scale", "scale_se", "shape", "shape_se"]),
    };
    finish(&batch, &ids, outputs, Vec::new(), a, c.seed, table_checksum())
}

fn select_r_site(site: &SiteSeries, a: &SelectRArgs, test: RTest, prep: &Prepared) -> SiteOutput {
    let c = &a.common;
    let id = site.site_id.as_str();
    let mut o = SiteOutput::default();
    let b = block_series(site, prep.season, c.min_completeness);
    let dc = match decluster_top_r(&b.values, &b.labels, a.rmax, a.tau) {
        Ok(d) => d,
        Err(e) => {
            o.status = Some(Status::Failed(e.to_string()));
            return o;
        }
    };
    o.summary = vec![dc.rows.len().to_string()];
    if dc.rows.len() < c.min_blocks {
        o.status = Some(Status::Excluded(format!(
            "{} blocks with {} values after screening, need {}",
            dc.rows.len(),
            a.rmax,
            c.min_blocks
        )));
        return o;
    }
    let sample = match dc.to_sample() {
        Ok(s) => s,
        Err(e) => {
            o.status = Some(Status::Failed(e.to_string()));
            return o;
        }
    };
    let sel = match select_r(&sample, a.rmax, test, prep.rule, c.alpha, a.bootstrap, site_seed(c.seed, id)) {
        Ok(s) => s,
        Err(e) => {
            o.status = Some(Status::Failed(e.to_string()));
            return o;
        }
    };
    for r in 1..=a.rmax {
        let t = sel.tests[r - 1].as_ref();
        let pos = a.rmax - r;
        let path = |v: &Vec<f64>| opt(v.get(pos).copied());
        o.pvalues.push(vec![
            id.into(),
            r.to_string(),
            opt(t.map(|t| t.statistic)),
            opt(t.map(|t| t.p_value)),
            path(&sel.selection.forwardstop_path),
            path(&sel.selection.strongstop_path),
            rejected_flag(&sel.selection, pos),
        ]);
    }
    let fits: Vec<Option<FitResult>> = (1..=a.rmax)
        .map(|r| sample.truncate(r).ok().and_then(|s| fit_gevr_mle(&s, None).ok()))
        .collect();
    for (r, f) in fits.iter().enumerate() {
        let mut row = vec![id.into(), (r + 1).to_string()];
        row.extend(params_and_se(f.as_ref(), 3));
        o.traces.push(row);
    }
    if sel.chosen_r == 0 {
        o.summary.push("NA".into());
        o.status = Some(Status::AllRejected("every depth rejected, including r = 1".into()));
        return o;
    }
    o.summary.push(sel.chosen_r.to_string());
    let fit = match &fits[sel.chosen_r - 1] {
        Some(f) if f.converged => f,
        _ => {
            o.status = Some(Status::Failed(format!("GEV_r fit at r = {} did not converge", sel.chosen_r)));
            return o;
        }
    };
    o.summary.extend(params_and_se(Some(fit), 3));
    let sub = sample.truncate(sel.chosen_r).expect("checked depth");
    let p = fit.gev().expect("GEV fit");
    for &t in &c.periods {
        let point = gev_return_level(t, &p).unwrap_or(f64::NAN);
        let r = interval(ProfileData::Gevr(&sub), fit, &Target::ReturnLevel { period: t }, c.level, point);
        o.returns.push(return_row(id, t, &r));
    }
    o.status = Some(Status::Ok);
    o
}

enum GridSpec {
    Percentile,
    Percent { lo: f64, hi: f64, step: f64 },
    Values(Vec<f64>),
}

fn parse_grid(s: &str) -> Result<GridSpec, String> {
    if s == "percentile" {
        return Ok(GridSpec::Percentile);
    }
    if let Some(rest) = s.strip_prefix("pct:") {
        let v: Vec<f64> = rest.split(':').map(|x| x.parse::<f64>()).collect::<Result<_, _>>().map_err(|e| format!("--grid: {e}"))?;
        if v.len() != 3 || !(v[2] > 0.0) || !(0.0..100.0).contains(&v[0]) || !(v[0]..100.0).contains(&v[1]) {
            return Err(format!("--grid pct:LO:HI:STEP needs 0 <= LO <= HI < 100 and STEP > 0, got '{s}'"));
        }
        return Ok(GridSpec::Percent { lo: v[0], hi: v[1], step: v[2] });
    }
    if let Some(rest) = s.strip_prefix("u:") {
        let v: Vec<f64> = rest.split(',').map(|x| x.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|e| format!("--grid: {e}"))?;
        if v.is_empty() || v.windows(2).any(|w| !(w[0] < w[1])) {
            return Err("--grid u: values must be strictly increasing".into());
        }
        return Ok(GridSpec::Values(v));
    }
    Err(format!("unknown grid '{s}'; use percentile, pct:LO:HI:STEP or u:V1,V2,..."))
}

fn build_grid(spec: &GridSpec, data: &[f64]) -> evkit::Result<ThresholdGrid> {
    match spec {
        GridSpec::Percentile => percentile_threshold_grid(data),
        GridSpec::Percent { lo, hi, step } => {
            let n = ((hi - lo) / step + 1e-9).floor() as usize;
            let probs: Vec<f64> = (0..=n).map(|i| (lo + i as f64 * step) / 100.0).collect();
            quantile_threshold_grid(data, &probs)
        }
        GridSpec::Values(v) => ThresholdGrid::new(data, v),
    }
}

pub fn run_select_threshold(a: &ThresholdArgs) -> Result<Outcome, String> {
    let test: ThresholdTest = a.test.parse().map_err(|e: evkit::Error| e.to_string())?;
    let grid = parse_grid(&a.grid)?;
    let table = NullTable::default_table();
    let table = match (test, table) {
        (_, Ok(t)) => Some(t),
        (ThresholdTest::AndersonDarling | ThresholdTest::CramerVonMises, Err(e)) => {
            return Err(format!("cannot load the null table: {e}"))
        }
        (_, Err(_)) => None,
    };
    let c = &a.common;
    let prep = prepare(c)?;
    let outputs: Vec<SiteOutput> = prep.sites.par_iter().map(|s| threshold_site(s, a, test, &grid, table, &prep)).collect();
    let ids: Vec<String> = prep.sites.iter().map(|s| s.site_id.clone()).collect();
    let batch = Batch {
        mode: "select-threshold",
        out: &c.out,
        site_header: &[
            "site_id", "status", "reason", "n_obs", "n_blocks", "chosen_index", "threshold", "n_exceed", "scale", "scale_se",
            "shape", "shape_se",
        ],
        return_header: Some(RETURN_HEADER),
        pvalue_header: Some(&[
            "site_id", "index", "threshold", "n_exceed", "statistic", "p_value", "forwardstop", "strongstop", "rejected",
        ]),
        trace_header: Some(&["site_id", "index", "threshold", "scale", "scale_se", "shape", "shape_se"]),
    };
    finish(&batch, &ids, outputs, Vec::new(), a, c.seed, table.map(|t| t.checksum()))
}

fn threshold_site(
    site: &SiteSeries,
    a: &ThresholdArgs,
    test: ThresholdTest,
    grid_spec: &GridSpec,
    table: Option<&NullTable>,
    prep: &Prepared,
) -> SiteOutput {
    let c = &a.common;
    let id = site.site_id.as_str();
    let mut o = SiteOutput::default();
    let b = block_series(site, prep.season, c.min_completeness);
    let data = &b.values;
    o.summary = vec![data.len().to_string(), b.n_blocks().to_string()];
    if b.n_blocks() < c.min_blocks {
        o.status = Some(Status::Excluded(format!("{} usable blocks, need {}", b.n_blocks(), c.min_blocks)));
        return o;
    }
    let fail = |mut o: SiteOutput, e: String| {
        o.status = Some(Status::Failed(e));
        o
    };
    let grid = match build_grid(grid_spec, data) {
        Ok(g) => g,
        Err(e) => return fail(o, e.to_string()),
    };
    // moran and rao never touch the table
    let fallback;
    let table = match table {
        Some(t) => t,
        None => {
            fallback = placeholder_table();
            &fallback
        }
    };
    let opts = ThresholdOptions {
        table,
        bootstrap: a.bootstrap,
        seed: site_seed(c.seed, id),
        rao_intervals: 9,
        min_exceedances: a.min_exceedances,
    };
    let sel = match select_threshold(data, &grid, test, prep.rule, c.alpha, &opts) {
        Ok(s) => s,
        Err(e) => return fail(o, e.to_string()),
    };
    let excess = |u: f64| -> Vec<f64> { data.iter().filter(|&&v| v > u).map(|v| v - u).collect() };
    for (i, &u) in grid.thresholds.iter().enumerate() {
        let t = sel.tests[i].as_ref();
        let path = |v: &Vec<f64>| opt(v.get(i).copied());
        o.pvalues.push(vec![
            id.into(),
            i.to_string(),
            num(u),
            grid.counts[i].to_string(),
            opt(t.map(|t| t.statistic)),
            opt(t.map(|t| t.p_value)),
            path(&sel.selection.forwardstop_path),
            path(&sel.selection.strongstop_path),
            rejected_flag(&sel.selection, i),
        ]);
        let f = fit_gpd_mle(&excess(u)).ok();
        let mut row = vec![id.into(), i.to_string(), num(u)];
        row.extend(params_and_se(f.as_ref(), 2));
        o.traces.push(row);
    }
    let (Some(k), Some(u)) = (sel.chosen_index, sel.chosen_threshold) else {
        o.summary.extend(["NA".into(), "NA".into()]);
        return SiteOutput {
            status: Some(Status::AllRejected(format!("all {} tested thresholds rejected", sel.selection.raw_p.len()))),
            ..o
        };
    };
    let y = excess(u);
    o.summary.extend([opt_usize(Some(k)), num(u), y.len().to_string()]);
    let fit = match fit_gpd_mle(&y) {
        Ok(f) if f.converged => f,
        _ => return fail(o, format!("GPD fit above {} did not converge", num(u))),
    };
    o.summary.extend(params_and_se(Some(&fit), 2));
    let p = fit.gpd().expect("GPD fit");
    let n_y = data.len() as f64 / b.n_blocks() as f64;
    let zeta = y.len() as f64 / data.len() as f64;
    for &t in &c.periods {
        let target = Target::GpdReturnLevel { period: t, threshold: u, obs_per_year: n_y, rate: zeta };
        let point = gpd_return_level(t, u, &p, n_y, zeta).unwrap_or(f64::NAN);
        let r = interval(ProfileData::Excesses(&y), &fit, &target, c.level, point);
        o.returns.push(return_row(id, t, &r));
    }
    o.status = Some(Status::Ok);
    o
}

fn placeholder_table() -> NullTable {
    NullTable {
        shape_grid: Vec::new(),
        percentile_grid: Vec::new(),
        ad: Vec::new(),
        cvm: Vec::new(),
        mc_replicates: 0,
        mc_sample_size: 0,
        seed: 0,
        fit_failures: Vec::new(),
    }
}

fn read_covariate(path: &Path) -> Result<std::collections::HashMap<i64, f64>, String> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut out = std::collections::HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| format!("{}: {e}", path.display()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let parse = || -> Option<(i64, f64)> { Some((rec.get(0)?.parse().ok()?, rec.get(1)?.parse().ok().filter(|v: &f64| v.is_finite())?)) };
        let (k, v) = parse().ok_or_else(|| format!("{} line {line}: expected block,value", path.display()))?;
        if out.insert(k, v).is_some() {
            return Err(format!("{} line {line}: duplicate block {k}", path.display()));
        }
    }
    Ok(out)
}

pub fn run_rfa(a: &RfaArgs) -> Result<Outcome, String> {
    let method: Method = match a.method.as_str() {
        "mle" => Method::Mle,
        "mps" => Method::Mps,
        "hybrid" => Method::Hybrid,
        m => return Err(format!("unknown method '{m}'; use mle, mps or hybrid")),
    };
    let covariate = a.covariate.as_deref().map(read_covariate).transpose()?;
    let c = &a.common;
    let prep = prepare(c)?;
    let ids: Vec<String> = prep.sites.iter().map(|s| s.site_id.clone()).collect();
    let maxima: Vec<Vec<(i64, f64)>> =
        prep.sites.iter().map(|s| block_series(s, prep.season, c.min_completeness).maxima()).collect();
    let mut outputs: Vec<SiteOutput> = maxima
        .iter()
        .map(|m| {
            let mut o = SiteOutput { summary: vec![m.len().to_string()], ..SiteOutput::default() };
            if m.len() < c.min_blocks {
                o.status = Some(Status::Excluded(format!("{} usable blocks, need {}", m.len(), c.min_blocks)));
            }
            o
        })
        .collect();
    let included: Vec<usize> = (0..ids.len()).filter(|&i| outputs[i].status.is_none()).collect();
    let mut common: Option<BTreeSet<i64>> = None;
    for &i in &included {
        let labels: BTreeSet<i64> = maxima[i].iter().map(|v| v.0).collect();
        common = Some(match common {
            None => labels,
            Some(c) => c.intersection(&labels).copied().collect(),
        });
    }
    let mut periods: Vec<i64> = common.unwrap_or_default().into_iter().collect();
    if let Some(cov) = &covariate {
        periods.retain(|b| cov.contains_key(b));
    }
    let mut coefs = Table::new(&["term", "estimate", "se", "ci_low", "ci_high"]);
    let mut returns = Table::new(RETURN_HEADER);
    let fit_result = fit_region(a, method, &ids, &maxima, &included, &periods, covariate.as_ref(), &mut coefs, &mut returns);
    for (j, &i) in included.iter().enumerate() {
        let o = &mut outputs[i];
        match &fit_result {
            Ok(site_params) => {
                let (mu, sigma, xi) = site_params[j];
                o.summary.extend([periods.len().to_string(), num(mu), num(sigma), num(xi)]);
                o.status = Some(Status::Ok);
            }
            Err(e) => o.status = Some(Status::Failed(e.clone())),
        }
    }
    let batch = Batch {
        mode: "rfa-fit",
        out: &c.out,
        site_header: &["site_id", "status", "reason", "n_blocks", "n_common", "loc", "scale", "shape"],
        return_header: None,
        pvalue_header: None,
        trace_header: None,
    };
    let extra = vec![("coefficients.csv", coefs), ("return_levels.csv", returns)];
    finish(&batch, &ids, outputs, extra, a, c.seed, table_checksum())
}

/// Fit the regional model and fill the coefficient and return-level
/// tables; returns each included site's margin at the conditioning value.
#[allow(clippy::too_many_arguments)]
fn fit_region(
    a: &RfaArgs,
    method: Method,
    ids: &[String],
    maxima: &[Vec<(i64, f64)>],
    included: &[usize],
    periods: &[i64],
    covariate: Option<&std::collections::HashMap<i64, f64>>,
    coefs: &mut Table,
    returns: &mut Table,
) -> Result<Vec<(f64, f64, f64)>, String> {
    let c = &a.common;
    let (m, n) = (included.len(), periods.len());
    if m == 0 {
        return Err("no site passed screening".into());
    }
    if n < 3 {
        return Err(format!("sites share only {n} blocks"));
    }
    let mut data = DMatrix::zeros(m, n);
    for (j, &i) in included.iter().enumerate() {
        let lookup: std::collections::HashMap<i64, f64> = maxima[i].iter().copied().collect();
        for (t, b) in periods.iter().enumerate() {
            data[(j, t)] = lookup[b];
        }
    }
    let spec = match covariate {
        Some(cov) => {
            let x = DMatrix::from_iterator(n, 1, periods.iter().map(|b| cov[b]));
            LinkedModelSpec::with_location_covariates(m, n, &x).map_err(|e| e.to_string())?
        }
        None => LinkedModelSpec::stationary(m, n),
    };
    let fit = fit_rfa(&data, &spec, method).map_err(|e| e.to_string())?;
    if !fit.converged {
        return Err(format!("{} fit did not converge", method.as_str()));
    }
    let est = fit.rfa().expect("regional fit").clone();
    let boot = if a.bootstrap > 0 {
        Some(semiparametric_bootstrap(&data, &spec, method, a.bootstrap, c.seed).map_err(|e| e.to_string())?)
    } else {
        None
    };
    let se = match &boot {
        Some(b) => Some(b.se.clone()),
        None => fit.std_errors(),
    };
    let mut names: Vec<String> = included.iter().map(|&i| format!("mu[{}]", ids[i])).collect();
    if covariate.is_some() {
        names.push("mu_covariate".into());
    }
    names.push("log_gamma0".into());
    names.push("xi0".into());
    for (k, (name, v)) in names.iter().zip(est.to_vec()).enumerate() {
        let ci = boot.as_ref().map(|b| b.ci[k]);
        coefs.push(vec![
            name.clone(),
            num(v),
            opt(se.as_ref().map(|s| s[k])),
            opt(ci.map(|c| c.0)),
            opt(ci.map(|c| c.1)),
        ]);
    }
    let x_mu: Vec<f64> = if covariate.is_some() { vec![a.condition] } else { Vec::new() };
    let mut out = Vec::with_capacity(m);
    for (j, &i) in included.iter().enumerate() {
        let p = spec.margin_at(&est, j, &x_mu, &[], &[]).map_err(|e| e.to_string())?;
        out.push((p.loc, p.scale, p.shape));
        for &t in &c.periods {
            let r = rfa_return_level(&est, &spec, j, (&x_mu, &[], &[]), t, boot.as_ref()).map_err(|e| e.to_string())?;
            returns.push(return_row(&ids[i], t, &r));
        }
    }
    Ok(out)
}

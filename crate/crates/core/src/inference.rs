//! Return levels with delta-method and profile-likelihood intervals,
//! conditional return levels of the regional model, and a rank-based
//! bootstrap that keeps the cross-site dependence of the data.

use nalgebra::DMatrix;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::dist::{expm1_ratio, gev_cdf, gev_quantile, gev_quantile_unchecked, GevParams, GpdParams, TopROrderSample};
use crate::error::{Error, Result};
use crate::estimation::{
    fit_rfa, gevr_negloglik, gpd_negloglik, CoefficientSet, Estimate, FitResult, LinkedModelSpec, Method, SiteMatrix,
};
use crate::optim::{bisect, gradient, nelder_mead, NelderMead};
use crate::rng::{derive_seed, open_uniform, rng_from_seed, stream_rng};

/// The `1 - 1/t` quantile of the GEV.
pub fn gev_return_level(t: f64, p: &GevParams) -> Result<f64> {
    if !(t > 1.0) || !t.is_finite() {
        return Err(Error::InvalidParameter(format!("return period must exceed 1, got {t}")));
    }
    gev_quantile(1.0 - 1.0 / t, p)
}

/// `N`-year level of a GPD fitted above `u`, with `n_y` observations per
/// year of which a fraction `zeta` exceed `u`.
pub fn gpd_return_level(n_years: f64, u: f64, p: &GpdParams, n_y: f64, zeta: f64) -> Result<f64> {
    let m = n_years * n_y * zeta;
    if !(zeta > 0.0) || !(n_y > 0.0) || !(m > 1.0) || !m.is_finite() {
        return Err(Error::InvalidParameter(format!("need N * n_y * zeta > 1, got {m}")));
    }
    if !(p.scale > 0.0) {
        return Err(Error::InvalidParameter("scale must be positive".into()));
    }
    Ok(u + p.scale * expm1_ratio(p.shape, m.ln()))
}

/// Quantity of interest for an interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Target {
    Shape,
    /// GEV return level for period `t`.
    ReturnLevel { period: f64 },
    /// GPD return level; the fit must be to excesses over `threshold`.
    GpdReturnLevel { period: f64, threshold: f64, obs_per_year: f64, rate: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntervalMethod {
    None,
    Delta,
    Profile,
    Bootstrap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnLevelEstimate {
    pub target: Target,
    pub estimate: f64,
    /// `None` when no interval was computed or the profile never crossed
    /// the cutoff on that side.
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub level: f64,
    pub method: IntervalMethod,
    /// Covariates the estimate is conditioned on (regional model).
    pub conditioning: Vec<f64>,
    pub notes: Vec<String>,
}

fn target_value(target: &Target, est: &Estimate) -> Result<f64> {
    match (target, est) {
        (Target::Shape, Estimate::Gev(p)) => Ok(p.shape),
        (Target::Shape, Estimate::Gpd(p)) => Ok(p.shape),
        (Target::ReturnLevel { period }, Estimate::Gev(p)) => gev_return_level(*period, p),
        (Target::GpdReturnLevel { period, threshold, obs_per_year, rate }, Estimate::Gpd(p)) => {
            gpd_return_level(*period, *threshold, p, *obs_per_year, *rate)
        }
        _ => Err(Error::InvalidParameter("target does not apply to this fit".into())),
    }
}

fn natural(est: &Estimate) -> Result<Vec<f64>> {
    match est {
        Estimate::Gev(p) => Ok(p.to_vec()),
        Estimate::Gpd(p) => Ok(vec![p.scale, p.shape]),
        _ => Err(Error::InvalidParameter("intervals need a stationary GEV or GPD fit".into())),
    }
}

fn rebuild(est: &Estimate, v: &[f64]) -> Estimate {
    match est {
        Estimate::Gev(_) => Estimate::Gev(GevParams { loc: v[0], scale: v[1], shape: v[2] }),
        _ => Estimate::Gpd(GpdParams { scale: v[0], shape: v[1] }),
    }
}

/// Delta-method standard error `sqrt(g' Sigma g)` of the target.
pub fn delta_method_se(fit: &FitResult, target: &Target) -> Result<f64> {
    let cov = fit.covariance.as_ref().ok_or_else(|| Error::Numerical("covariance is unavailable".into()))?;
    let x = natural(&fit.estimate)?;
    let g = gradient(|v| target_value(target, &rebuild(&fit.estimate, v)).unwrap_or(f64::NAN), &x);
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("target gradient is not finite".into()));
    }
    let g = nalgebra::DVector::from_vec(g);
    let var = (g.transpose() * cov * &g)[(0, 0)];
    Ok(var.max(0.0).sqrt())
}

/// Symmetric normal interval from the delta-method standard error.
pub fn delta_ci(fit: &FitResult, target: &Target, level: f64) -> Result<ReturnLevelEstimate> {
    check_level(level)?;
    let est = target_value(target, &fit.estimate)?;
    let se = delta_method_se(fit, target)?;
    let z = Normal::new(0.0, 1.0).unwrap().inverse_cdf(0.5 + level / 2.0);
    Ok(ReturnLevelEstimate {
        target: *target,
        estimate: est,
        ci_low: Some(est - z * se),
        ci_high: Some(est + z * se),
        level,
        method: IntervalMethod::Delta,
        conditioning: Vec::new(),
        notes: Vec::new(),
    })
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.5 && level < 1.0) {
        return Err(Error::InvalidParameter(format!("level must be in (0.5, 1), got {level}")));
    }
    Ok(())
}

/// Data a likelihood fit was computed from.
#[derive(Debug, Clone, Copy)]
pub enum ProfileData<'a> {
    /// Block maxima or top-r blocks for a GEV / GEV_r fit.
    Gevr(&'a TopROrderSample),
    /// Excesses over the threshold for a GPD fit.
    Excesses(&'a [f64]),
}

/// Maps a fixed target value and free nuisance coordinates to the natural
/// parameters, so the target becomes an explicit parameter.
fn reparam(target: &Target, psi: f64, free: &[f64], gev: bool) -> Option<Vec<f64>> {
    match (target, gev) {
        (Target::Shape, true) => Some(vec![free[0], free[1].exp(), psi]),
        (Target::Shape, false) => Some(vec![free[0].exp(), psi]),
        (Target::ReturnLevel { period }, true) => {
            let (sigma, xi) = (free[0].exp(), free[1]);
            let w = -(-(1.0 - 1.0 / period).ln()).ln();
            Some(vec![psi - sigma * expm1_ratio(xi, w), sigma, xi])
        }
        (Target::GpdReturnLevel { period, threshold, obs_per_year, rate }, false) => {
            let xi = free[0];
            let d = expm1_ratio(xi, (period * obs_per_year * rate).ln());
            let sigma = (psi - threshold) / d;
            (sigma > 0.0).then(|| vec![sigma, xi])
        }
        _ => None,
    }
}

fn free_start(target: &Target, x: &[f64], gev: bool) -> Vec<f64> {
    match (target, gev) {
        (Target::Shape, true) => vec![x[0], x[1].ln()],
        (Target::Shape, false) => vec![x[0].ln()],
        (Target::ReturnLevel { .. }, _) => vec![x[1].ln(), x[2]],
        (_, false) => vec![x[1]],
        _ => unreachable!(),
    }
}

fn steps_for(free: &[f64]) -> Vec<f64> {
    free.iter().map(|v| 0.1 * v.abs().max(0.5)).collect()
}

/// Profile-likelihood interval: the set of target values whose profile
/// log-likelihood is within `chi2_1(level) / 2` of the maximum. Brackets
/// are expanded geometrically from the estimate in steps starting at half
/// the delta-method standard error, then bisected.
pub fn profile_likelihood_ci(data: ProfileData, fit: &FitResult, target: &Target, level: f64) -> Result<ReturnLevelEstimate> {
    check_level(level)?;
    if !fit.converged || fit.method != Method::Mle {
        return Err(Error::Convergence("profile intervals need a converged likelihood fit".into()));
    }
    let x = natural(&fit.estimate)?;
    let gev = matches!(fit.estimate, Estimate::Gev(_));
    let nll = |v: &[f64]| -> f64 {
        match (data, gev) {
            (ProfileData::Gevr(s), true) => {
                if !(v[1] > 0.0) {
                    return f64::INFINITY;
                }
                gevr_negloglik(s, &GevParams { loc: v[0], scale: v[1], shape: v[2] })
            }
            (ProfileData::Excesses(y), false) => {
                if !(v[0] > 0.0) {
                    return f64::INFINITY;
                }
                gpd_negloglik(y, &GpdParams { scale: v[0], shape: v[1] })
            }
            _ => f64::NAN,
        }
    };
    if nll(&x).is_nan() {
        return Err(Error::InvalidInput("data do not match the fitted family".into()));
    }
    let est = target_value(target, &fit.estimate)?;
    let l_hat = -nll(&x);
    let cut = l_hat - ChiSquared::new(1.0).unwrap().inverse_cdf(level) / 2.0;
    let opts = NelderMead { max_evals: 2000, ftol: 1e-11, xtol: 1e-8, restarts: 1 };

    let profile = |psi: f64, start: &[f64]| -> (f64, Vec<f64>) {
        let obj = |f: &[f64]| reparam(target, psi, f, gev).map_or(f64::INFINITY, |v| nll(&v));
        let mut x0 = start.to_vec();
        if !obj(&x0).is_finite() {
            x0 = free_start(target, &x, gev);
        }
        let m = nelder_mead(obj, &x0, &steps_for(&x0), &opts);
        (-m.f, m.x)
    };

    let se = delta_method_se(fit, target).ok().filter(|s| *s > 0.0 && s.is_finite()).unwrap_or(0.1 * est.abs().max(0.1));
    let mut notes = Vec::new();
    let side = |dir: f64| -> Option<f64> {
        let mut inside = est;
        let mut free = free_start(target, &x, gev);
        let mut off = 0.5 * se;
        for _ in 0..50 {
            let psi = est + dir * off;
            let (l, f) = profile(psi, &free);
            if !(l > cut) {
                let start = free.clone();
                // a restart from the warm start can land on a better optimum
                // than the one that crossed; keep expanding in that case
                if let Some(root) = bisect(
                    |p| {
                        let d = profile(p, &start).0 - cut;
                        if d.is_finite() { d } else { -1.0 }
                    },
                    inside,
                    psi,
                    1e-6,
                    200,
                ) {
                    return Some(root);
                }
            }
            inside = psi;
            free = f;
            off *= 1.5;
        }
        None
    };
    let lo = side(-1.0);
    let hi = side(1.0);
    if lo.is_none() {
        notes.push("profile did not cross the cutoff below the estimate".into());
    }
    if hi.is_none() {
        notes.push("profile did not cross the cutoff above the estimate".into());
    }
    Ok(ReturnLevelEstimate {
        target: *target,
        estimate: est,
        ci_low: lo,
        ci_high: hi,
        level,
        method: IntervalMethod::Profile,
        conditioning: Vec::new(),
        notes,
    })
}

/// Replicated coefficient estimates from [`semiparametric_bootstrap`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub estimate: CoefficientSet,
    /// One row per successful replicate, coefficients in `to_vec` order.
    pub replicates: Vec<Vec<f64>>,
    pub se: Vec<f64>,
    /// 95% percentile intervals.
    pub ci: Vec<(f64, f64)>,
    pub failed: usize,
    /// More than 20% of refits failed.
    pub flagged: bool,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl BootstrapResult {
    fn summarize(estimate: CoefficientSet, replicates: Vec<Vec<f64>>, failed: usize, b: usize) -> Result<Self> {
        if replicates.len() < 2 {
            return Err(Error::Convergence(format!("only {} of {b} bootstrap refits succeeded", replicates.len())));
        }
        let p = replicates[0].len();
        let k = replicates.len() as f64;
        let mut se = Vec::with_capacity(p);
        let mut ci = Vec::with_capacity(p);
        for j in 0..p {
            let mut col: Vec<f64> = replicates.iter().map(|r| r[j]).collect();
            let mean = col.iter().sum::<f64>() / k;
            se.push((col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt());
            col.sort_by(f64::total_cmp);
            ci.push((percentile(&col, 0.025), percentile(&col, 0.975)));
        }
        Ok(BootstrapResult { estimate, replicates, se, ci, failed, flagged: failed as f64 > 0.2 * b as f64 })
    }
}

/// Ranks `0..n` of `v` with ties broken in random order.
fn random_ranks<R: rand::Rng>(v: &[f64], rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<(usize, f64, u64)> = v.iter().enumerate().map(|(i, &x)| (i, x, rng.gen())).collect();
    idx.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.2.cmp(&b.2)));
    let mut ranks = vec![0; v.len()];
    for (r, (i, _, _)) in idx.into_iter().enumerate() {
        ranks[i] = r;
    }
    ranks
}

/// Semi-parametric bootstrap for the regional model. The data are
/// transformed to uniform residuals with the fitted margins and ranked
/// within each site; each replicate resamples years of rank vectors, lays
/// fresh sorted uniforms out by those ranks, maps them back through the
/// fitted margins of each (site, year) and refits.
pub fn semiparametric_bootstrap(data: &SiteMatrix, spec: &LinkedModelSpec, method: Method, b: usize, seed: u64) -> Result<BootstrapResult> {
    if b == 0 {
        return Err(Error::InvalidParameter("bootstrap size must be positive".into()));
    }
    let fit = fit_rfa(data, spec, method)?;
    if !fit.converged {
        return Err(Error::Convergence("initial regional fit failed".into()));
    }
    let coef = fit.rfa().expect("regional fit").clone();
    let (m, n) = (spec.sites(), spec.periods());
    let mut margins = Vec::with_capacity(m * n);
    for s in 0..m {
        for t in 0..n {
            margins.push(spec.margin(&coef, s, t)?);
        }
    }
    let mut rng = rng_from_seed(derive_seed(seed, u64::MAX));
    let ranks: Vec<Vec<usize>> = (0..m)
        .map(|s| {
            let u: Vec<f64> = (0..n).map(|t| gev_cdf(data[(s, t)], &margins[s * n + t])).collect();
            random_ranks(&u, &mut rng)
        })
        .collect();

    let reps: Vec<Option<Vec<f64>>> = (0..b as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(seed, k);
            let years: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let mut y = DMatrix::zeros(m, n);
            for s in 0..m {
                let picked: Vec<f64> = years.iter().map(|&t| ranks[s][t] as f64).collect();
                let order = random_ranks(&picked, &mut rng);
                let mut u: Vec<f64> = (0..n).map(|_| open_uniform(&mut rng)).collect();
                u.sort_by(f64::total_cmp);
                for t in 0..n {
                    y[(s, t)] = gev_quantile_unchecked(u[order[t]], &margins[s * n + t]);
                }
            }
            let f = fit_rfa(&y, spec, method).ok().filter(|f| f.converged)?;
            let v = f.rfa()?.to_vec();
            v.iter().all(|x| x.is_finite()).then_some(v)
        })
        .collect();
    let failed = reps.iter().filter(|r| r.is_none()).count();
    BootstrapResult::summarize(coef, reps.into_iter().flatten().collect(), failed, b)
}

/// Return level of site `site` at covariate values `x_mu`, `x_gamma`,
/// `x_xi` (non-intercept columns of each design). With a bootstrap result
/// the interval is the percentile interval of the replicated levels.
pub fn rfa_return_level(
    coeffs: &CoefficientSet,
    spec: &LinkedModelSpec,
    site: usize,
    covariates: (&[f64], &[f64], &[f64]),
    t: f64,
    bootstrap: Option<&BootstrapResult>,
) -> Result<ReturnLevelEstimate> {
    let (xm, xg, xx) = covariates;
    let p = spec.margin_at(coeffs, site, xm, xg, xx)?;
    let est = gev_return_level(t, &p)?;
    let mut conditioning = xm.to_vec();
    conditioning.extend_from_slice(xg);
    conditioning.extend_from_slice(xx);
    let mut out = ReturnLevelEstimate {
        target: Target::ReturnLevel { period: t },
        estimate: est,
        ci_low: None,
        ci_high: None,
        level: 0.95,
        method: IntervalMethod::None,
        conditioning,
        notes: Vec::new(),
    };
    if let Some(bs) = bootstrap {
        let mut levels: Vec<f64> = bs
            .replicates
            .iter()
            .filter_map(|r| {
                let c = CoefficientSet::from_vec(r, spec);
                let p = spec.margin_at(&c, site, xm, xg, xx).ok()?;
                gev_return_level(t, &p).ok()
            })
            .collect();
        if levels.len() >= 2 {
            levels.sort_by(f64::total_cmp);
            out.ci_low = Some(percentile(&levels, 0.025).min(est));
            out.ci_high = Some(percentile(&levels, 0.975).max(est));
            out.method = IntervalMethod::Bootstrap;
            if levels.len() < bs.replicates.len() {
                out.notes.push(format!("{} replicates gave no return level", bs.replicates.len() - levels.len()));
            }
        }
    }
    Ok(out)
}

use super::gpd::{check_excesses, gpd_pwm};
use super::{covariance_from_hessian, default_optimizer, Estimate, FitResult, Method};
use crate::dist::{gev_cdf, gev_sf, gpd_cdf, gpd_sf, GevParams, GpdParams};
use crate::error::{Error, Result};
use crate::lmoments::gev_lmom_fit;
use crate::optim::{hessian, nelder_mead};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Gev,
    Gpd,
}

/// Sorted distinct values with multiplicities.
fn distinct(data: &[f64]) -> Vec<(f64, usize)> {
    let mut x = data.to_vec();
    x.sort_by(f64::total_cmp);
    let mut out: Vec<(f64, usize)> = Vec::with_capacity(x.len());
    for v in x {
        match out.last_mut() {
            Some((last, m)) if *last == v => *m += 1,
            _ => out.push((v, 1)),
        }
    }
    out
}

/// `-sum log D_i` over the `n + 1` spacings of a continuous distribution
/// function, with survival differences used in the upper half for accuracy.
/// Tied values share one spacing weighted by their multiplicity.
fn spacing_objective(values: &[(f64, usize)], cdf: impl Fn(f64) -> f64, sf: impl Fn(f64) -> f64) -> f64 {
    let mut total = 0.0;
    let (mut f_prev, mut s_prev) = (0.0, 1.0);
    for &(v, m) in values {
        let (f, s) = (cdf(v), sf(v));
        let d = if f < 0.5 { f - f_prev } else { s_prev - s };
        if !(d > 0.0) {
            return f64::INFINITY;
        }
        total -= m as f64 * d.ln();
        f_prev = f;
        s_prev = s;
    }
    if !(s_prev > 0.0) {
        return f64::INFINITY;
    }
    total - s_prev.ln()
}

/// Spacing objective `M(theta)` for one sample.
pub fn mps_objective(data: &[f64], family: Family, theta: &[f64]) -> f64 {
    let d = distinct(data);
    objective(&d, family, theta)
}

fn objective(d: &[(f64, usize)], family: Family, theta: &[f64]) -> f64 {
    match family {
        Family::Gev => {
            if !(theta[1] > 0.0) {
                return f64::INFINITY;
            }
            let p = GevParams::from_vec(theta);
            spacing_objective(d, |y| gev_cdf(y, &p), |y| gev_sf(y, &p))
        }
        Family::Gpd => {
            if !(theta[0] > 0.0) {
                return f64::INFINITY;
            }
            let p = GpdParams { scale: theta[0], shape: theta[1] };
            spacing_objective(d, |y| gpd_cdf(y, &p), |y| gpd_sf(y, &p))
        }
    }
}

/// Maximum product spacings fit.
///
/// For `Family::Gpd` the data are excesses over a threshold.
pub fn fit_mps(data: &[f64], family: Family) -> Result<FitResult> {
    if data.len() < 5 {
        return Err(Error::InsufficientData(format!("need at least 5 values, got {}", data.len())));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value".into()));
    }
    let d = distinct(data);
    if d.len() < 2 {
        return Err(Error::InvalidInput("data are constant".into()));
    }
    let opts = default_optimizer();
    match family {
        Family::Gev => {
            let start = gev_lmom_fit(data).unwrap_or(GevParams { loc: d[d.len() / 2].0, scale: 1.0, shape: 0.1 });
            let obj = |v: &[f64]| objective(&d, Family::Gev, &[v[0], v[1].exp(), v[2]]);
            let mut x0 = vec![start.loc, start.scale.ln(), start.shape.clamp(-0.9, 0.9)];
            if !obj(&x0).is_finite() {
                x0[2] = 0.0;
            }
            let m = nelder_mead(obj, &x0, &[0.2 * start.scale, 0.2, 0.1], &opts);
            let est = GevParams { loc: m.x[0], scale: m.x[1].exp(), shape: m.x[2] };
            let cov = covariance_from_hessian(hessian(|v| objective(&d, Family::Gev, v), &est.to_vec()));
            Ok(FitResult {
                estimate: Estimate::Gev(est),
                max_objective: -m.f,
                covariance: if m.converged { cov } else { None },
                converged: m.converged && m.f.is_finite(),
                method: Method::Mps,
                shape_warning: false,
                evals: m.evals,
                trace: Vec::new(),
            })
        }
        Family::Gpd => {
            check_excesses(data)?;
            let start = gpd_pwm(data);
            let obj = |v: &[f64]| objective(&d, Family::Gpd, &[v[0].exp(), v[1]]);
            let mut x0 = vec![start.scale.ln(), start.shape.clamp(-0.9, 0.9)];
            if !obj(&x0).is_finite() {
                let ymax = d.last().unwrap().0;
                x0 = vec![ymax.ln(), -0.5];
                if !obj(&x0).is_finite() {
                    x0 = vec![(data.iter().sum::<f64>() / data.len() as f64).ln(), 0.1];
                }
            }
            let m = nelder_mead(obj, &x0, &[0.2, 0.1], &opts);
            let est = GpdParams { scale: m.x[0].exp(), shape: m.x[1] };
            let cov = covariance_from_hessian(hessian(|v| objective(&d, Family::Gpd, v), &[est.scale, est.shape]));
            Ok(FitResult {
                estimate: Estimate::Gpd(est),
                max_objective: -m.f,
                covariance: if m.converged { cov } else { None },
                converged: m.converged && m.f.is_finite(),
                method: Method::Mps,
                shape_warning: false,
                evals: m.evals,
                trace: Vec::new(),
            })
        }
    }
}

use super::{covariance_from_hessian, Estimate, FitResult, Method};
use crate::dist::{gpd_log_pdf, GpdParams};
use crate::error::{Error, Result};
use crate::optim::{brent_minimize, hessian};

pub fn gpd_negloglik(y: &[f64], p: &GpdParams) -> f64 {
    let mut s = 0.0;
    for &v in y {
        let l = gpd_log_pdf(v, p);
        if l == f64::NEG_INFINITY {
            return f64::INFINITY;
        }
        s += l;
    }
    -s
}

pub(crate) fn check_excesses(y: &[f64]) -> Result<()> {
    if y.len() < 5 {
        return Err(Error::InsufficientData(format!("need at least 5 excesses, got {}", y.len())));
    }
    if y.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidInput("excesses must be finite and non-negative".into()));
    }
    if y.iter().all(|&v| v == y[0]) {
        return Err(Error::InvalidInput("excesses are constant".into()));
    }
    Ok(())
}

/// Probability-weighted-moment estimates, used as starting values.
pub fn gpd_pwm(y: &[f64]) -> GpdParams {
    let mut x = y.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let a0 = x.iter().sum::<f64>() / n;
    let a1 = x.iter().enumerate().map(|(i, v)| v * (n - 1.0 - i as f64) / (n - 1.0)).sum::<f64>() / n;
    let d = a0 - 2.0 * a1;
    if d > 0.0 {
        let k = a0 / d - 2.0;
        let scale = 2.0 * a0 * a1 / d;
        if scale > 0.0 && k.is_finite() {
            return GpdParams { scale, shape: -k };
        }
    }
    GpdParams { scale: a0.max(1e-12), shape: 0.0 }
}

/// Profile log-likelihood in `tau = xi/sigma`, with `xi(tau)` the mean of
/// `log(1 + tau*y)`. Returns `(loglik, xi)`.
fn profile(y: &[f64], mean: f64, tau: f64) -> (f64, f64) {
    let n = y.len() as f64;
    if (tau * mean).abs() < 1e-10 {
        // xi -> 0, sigma -> mean
        return (-n * (mean.ln() + 1.0), 0.0);
    }
    let mut k = 0.0;
    for &v in y {
        let t = tau * v;
        if t <= -1.0 {
            return (f64::NEG_INFINITY, f64::NAN);
        }
        k += t.ln_1p();
    }
    let xi = k / n;
    let sigma = xi / tau;
    if !(sigma > 0.0) {
        return (f64::NEG_INFINITY, xi);
    }
    (-n * (sigma.ln() + xi + 1.0), xi)
}

/// GPD maximum likelihood by a one-dimensional profile search.
///
/// The likelihood is unbounded for shapes below -1, so only interior maxima
/// with shape above -1 are accepted; anything else is a failed fit.
pub fn fit_gpd_mle(excesses: &[f64]) -> Result<FitResult> {
    check_excesses(excesses)?;
    let y = excesses;
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let ymax = y.iter().fold(0.0f64, |m, &v| m.max(v));

    // grid over s = tau * ymax in (-1, inf)
    let mut grid: Vec<f64> = Vec::with_capacity(48);
    for j in (1..=18).rev() {
        grid.push(-(1.0 - 10f64.powf(-(j as f64) / 2.0)));
    }
    grid.extend_from_slice(&[-0.5, -0.2, -0.1, -0.03, -0.01, 0.0]);
    for j in -4..=20 {
        grid.push(10f64.powf(j as f64 / 2.0));
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let f = |s: f64| {
        let (l, xi) = profile(y, mean, s / ymax);
        if xi.is_nan() || xi <= -1.0 {
            f64::NEG_INFINITY
        } else {
            l
        }
    };
    let vals: Vec<f64> = grid.iter().map(|&s| f(s)).collect();
    let mut best = None;
    for (i, &v) in vals.iter().enumerate() {
        if v.is_finite() && best.map_or(true, |b: usize| v > vals[b]) {
            best = Some(i);
        }
    }
    let fail = |p: GpdParams| FitResult {
        estimate: Estimate::Gpd(p),
        max_objective: f64::NEG_INFINITY,
        covariance: None,
        converged: false,
        method: Method::Mle,
        shape_warning: true,
        evals: grid.len(),
        trace: Vec::new(),
    };
    let Some(b) = best else {
        return Ok(fail(gpd_pwm(y)));
    };
    if b + 1 >= grid.len() {
        return Ok(fail(gpd_pwm(y)));
    }
    let lo = if b == 0 { -1.0 + 1e-12 } else { grid[b - 1] };
    let hi = grid[b + 1];
    let mut evals = grid.len();
    let (s_hat, negl) = brent_minimize(
        |s| {
            evals += 1;
            -f(s)
        },
        lo,
        hi,
        1e-12,
        300,
    );
    let (l_hat, xi_hat) = profile(y, mean, s_hat / ymax);
    let tau = s_hat / ymax;
    let scale = if (tau * mean).abs() < 1e-10 { mean } else { xi_hat / tau };
    let est = GpdParams { scale, shape: if (tau * mean).abs() < 1e-10 { 0.0 } else { xi_hat } };
    // An interior maximum must beat the neighbouring grid values; a maximum
    // that sits against the shape = -1 boundary is not a proper MLE.
    let interior = -negl >= vals[b] - 1e-9 && xi_hat > -1.0 + 1e-6 && (s_hat - lo) > 1e-9 * (1.0 + lo.abs());
    if !interior || !l_hat.is_finite() || !(scale > 0.0) {
        return Ok(fail(est));
    }
    let nat = |v: &[f64]| {
        if v[0] <= 0.0 {
            return f64::INFINITY;
        }
        gpd_negloglik(y, &GpdParams { scale: v[0], shape: v[1] })
    };
    let covariance = covariance_from_hessian(hessian(nat, &[est.scale, est.shape]));
    Ok(FitResult {
        estimate: Estimate::Gpd(est),
        max_objective: l_hat,
        covariance,
        converged: true,
        method: Method::Mle,
        shape_warning: est.shape <= -0.5,
        evals,
        trace: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::sample_gpd;
    use crate::optim::{nelder_mead, NelderMead};
    use crate::rng::rng_from_seed;

    #[test]
    fn matches_direct_optimization() {
        for (seed, shape) in [(1u64, 0.25), (2, -0.3), (3, 0.0), (4, 0.8)] {
            let truth = GpdParams::new(2.0, shape).unwrap();
            let y = sample_gpd(300, &truth, &mut rng_from_seed(seed));
            let fit = fit_gpd_mle(&y).unwrap();
            assert!(fit.converged, "shape {shape}");
            let p = fit.gpd().unwrap();
            let nm = nelder_mead(
                |v: &[f64]| gpd_negloglik(&y, &GpdParams { scale: v[0].exp(), shape: v[1] }),
                &[p.scale.ln() + 0.1, p.shape + 0.05],
                &[0.1, 0.05],
                &NelderMead { max_evals: 5000, ..Default::default() },
            );
            assert!(-nm.f <= fit.max_objective + 1e-7, "profile fit is not the maximum");
            assert!((nm.x[1] - p.shape).abs() < 1e-4);
        }
    }

    #[test]
    fn domain_errors() {
        assert!(fit_gpd_mle(&[1.0; 10]).is_err());
        assert!(fit_gpd_mle(&[1.0, 2.0]).is_err());
        assert!(fit_gpd_mle(&[1.0, 2.0, -1.0, 3.0, 4.0]).is_err());
    }
}

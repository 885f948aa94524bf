//! Goodness-of-fit tests for excesses over a fixed threshold: Anderson-Darling
//! and Cramer-von Mises with tabulated null distributions, Moran's spacing
//! test and a score test against a piecewise-constant shape.

mod table;

pub use table::{
    build_null_table, build_null_table_on, default_percentile_grid, default_shape_grid, NullTable, TailFit,
    NULL_TABLE_ENV, PVALUE_CEILING,
};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::dist::{expm1_ratio, gpd_cdf, gpd_log_pdf, gpd_sf, sample_gpd, GpdParams};
use crate::error::{Error, Result};
use crate::estimation::{fit_gpd_mle, fit_mps, Estimate, Family};
use crate::gof_gevr::{TestMethod, TestOutcome};
use crate::optim::{gauss_legendre, gradient};
use crate::rng::stream_rng;

const Z_MIN: f64 = 1e-300;
const Z_MAX: f64 = 1.0 - 1e-16;
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdfStatistic {
    AndersonDarling,
    CramerVonMises,
}

impl EdfStatistic {
    fn method(self) -> TestMethod {
        match self {
            EdfStatistic::AndersonDarling => TestMethod::AndersonDarling,
            EdfStatistic::CramerVonMises => TestMethod::CramerVonMises,
        }
    }
}

/// What to do when the fitted shape lies outside the table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutOfRange {
    /// Return `Error::OutOfTableRange`.
    Fail,
    /// Parametric bootstrap with the given number of replicates and seed.
    Bootstrap { replicates: usize, seed: u64 },
}

/// Sorted probability transforms, clamped into the open unit interval.
/// Returns the values and how many needed clamping.
fn pit(excesses: &[f64], theta: &GpdParams) -> (Vec<f64>, usize) {
    let mut clamped = 0;
    let mut z: Vec<f64> = excesses
        .iter()
        .map(|&y| {
            let v = gpd_cdf(y, theta);
            if v < Z_MIN || v > Z_MAX {
                clamped += 1;
            }
            v.clamp(Z_MIN, Z_MAX)
        })
        .collect();
    z.sort_by(f64::total_cmp);
    (z, clamped)
}

fn ad_from_pit(z: &[f64]) -> f64 {
    let n = z.len();
    let nf = n as f64;
    let s: f64 = (0..n).map(|i| (2 * i + 1) as f64 * (z[i].ln() + (-z[n - 1 - i]).ln_1p())).sum();
    -nf - s / nf
}

fn cvm_from_pit(z: &[f64]) -> f64 {
    let nf = z.len() as f64;
    z.iter().enumerate().map(|(i, &v)| (v - (2 * i + 1) as f64 / (2.0 * nf)).powi(2)).sum::<f64>() + 1.0 / (12.0 * nf)
}

/// Both statistics and the number of clamped transforms.
pub(crate) fn edf_statistics(excesses: &[f64], theta: &GpdParams) -> (f64, f64, usize) {
    let (z, c) = pit(excesses, theta);
    (ad_from_pit(&z), cvm_from_pit(&z), c)
}

/// Anderson-Darling statistic `A^2` of the excesses under `theta`.
pub fn ad_statistic(excesses: &[f64], theta: &GpdParams) -> f64 {
    ad_from_pit(&pit(excesses, theta).0)
}

/// Cramer-von Mises statistic `W^2` of the excesses under `theta`.
pub fn cvm_statistic(excesses: &[f64], theta: &GpdParams) -> f64 {
    cvm_from_pit(&pit(excesses, theta).0)
}

/// p-value of an AD or CVM statistic from the table.
pub fn ad_cvm_pvalue(which: EdfStatistic, stat: f64, xi_hat: f64, table: &NullTable) -> Result<f64> {
    table.p_value(which, stat, xi_hat)
}

fn fitted_gpd(excesses: &[f64]) -> Result<GpdParams> {
    let fit = fit_gpd_mle(excesses)?;
    if !fit.converged {
        return Err(Error::Convergence("GPD maximum likelihood fit failed".into()));
    }
    Ok(fit.gpd().expect("GPD fit"))
}

/// AD or CVM test of the GPD fitted by maximum likelihood.
pub fn edf_test(excesses: &[f64], which: EdfStatistic, table: &NullTable, out_of_range: OutOfRange) -> Result<TestOutcome> {
    let theta = fitted_gpd(excesses)?;
    let (a, w, clamped) = edf_statistics(excesses, &theta);
    let stat = match which {
        EdfStatistic::AndersonDarling => a,
        EdfStatistic::CramerVonMises => w,
    };
    let mut notes = Vec::new();
    if clamped > 0 {
        notes.push(format!("{clamped} probability transforms clamped into (0, 1)"));
    }
    let mut out = TestOutcome {
        statistic: stat,
        p_value: f64::NAN,
        theta_hat: Estimate::Gpd(theta),
        method: which.method(),
        bootstrap_size: 0,
        bootstrap_failures: 0,
        unreliable: false,
        notes,
    };
    match table.p_value(which, stat, theta.shape) {
        Ok(p) => out.p_value = p,
        Err(e @ Error::OutOfTableRange { .. }) => {
            let OutOfRange::Bootstrap { replicates, seed } = out_of_range else {
                return Err(e);
            };
            if replicates < 99 {
                return Err(Error::InvalidParameter(format!("bootstrap size must be at least 99, got {replicates}")));
            }
            let n = excesses.len();
            let reps: Vec<Option<f64>> = (0..replicates as u64)
                .into_par_iter()
                .map(|k| {
                    let y = sample_gpd(n, &theta, &mut stream_rng(seed, k));
                    let th = fitted_gpd(&y).ok()?;
                    let (a, w, _) = edf_statistics(&y, &th);
                    Some(if which == EdfStatistic::AndersonDarling { a } else { w })
                })
                .collect();
            let used = reps.iter().flatten().count();
            if used == 0 {
                return Err(Error::Convergence("every bootstrap refit failed".into()));
            }
            let exceed = reps.iter().flatten().filter(|&&v| v >= stat).count();
            out.p_value = (exceed as f64 + 1.0) / (used as f64 + 1.0);
            out.bootstrap_size = used;
            out.bootstrap_failures = replicates - used;
            out.unreliable = true;
            out.notes.push(format!("shape {:.3} outside the null table; parametric bootstrap p-value", theta.shape));
        }
        Err(e) => return Err(e),
    }
    Ok(out)
}

/// Anderson-Darling test with the tabulated p-value.
pub fn ad_test(excesses: &[f64], table: &NullTable) -> Result<TestOutcome> {
    edf_test(excesses, EdfStatistic::AndersonDarling, table, OutOfRange::Fail)
}

/// Cramer-von Mises test with the tabulated p-value.
pub fn cvm_test(excesses: &[f64], table: &NullTable) -> Result<TestOutcome> {
    edf_test(excesses, EdfStatistic::CramerVonMises, table, OutOfRange::Fail)
}

/// Centering constant of Moran's statistic for `n` observations.
pub fn moran_mean(n: usize) -> f64 {
    let m = n as f64 + 1.0;
    m * (m.ln() + EULER_GAMMA) - 0.5 - 1.0 / (12.0 * m)
}

pub fn moran_variance(n: usize) -> f64 {
    let m = n as f64 + 1.0;
    m * (std::f64::consts::PI.powi(2) / 6.0 - 1.0) - 0.5 - 1.0 / (6.0 * m)
}

/// Moran's test from the maximum product spacing fit; the scaled statistic
/// is referred to a chi-square law with `n` degrees of freedom.
pub fn moran_test(excesses: &[f64]) -> Result<TestOutcome> {
    let fit = fit_mps(excesses, Family::Gpd)?;
    if !fit.converged {
        return Err(Error::Convergence("product spacing fit failed".into()));
    }
    let n = excesses.len();
    let nf = n as f64;
    let m = -fit.max_objective;
    let sd = moran_variance(n).sqrt();
    let c1 = moran_mean(n) - (nf / 2.0).sqrt() * sd;
    let c2 = sd / (2.0 * nf).sqrt();
    let t = (m + 1.0 - c1) / c2;
    let chi = ChiSquared::new(nf).map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(TestOutcome {
        statistic: t,
        p_value: chi.sf(t),
        theta_hat: fit.estimate,
        method: TestMethod::Moran,
        bootstrap_size: 0,
        bootstrap_failures: 0,
        unreliable: false,
        notes: Vec::new(),
    })
}

/// Log-likelihood of sorted excesses under a GPD whose shape changes at
/// each interior threshold, with the scale carried forward so the density
/// stays continuous: `sigma_j = sigma_{j-1} + xi_{j-1} (v_j - v_{j-1})`.
/// `theta = [sigma_0, xi_0, ..., xi_k]`, `v` holds the `k` interior
/// thresholds, and points equal to `v_j` belong to the interval below.
pub fn piecewise_gpd_loglik(sorted: &[f64], v: &[f64], theta: &[f64]) -> f64 {
    let k = v.len();
    debug_assert_eq!(theta.len(), k + 2);
    let mut sigma = theta[0];
    let mut lower = 0.0;
    let mut log_surv = 0.0;
    let mut total = 0.0;
    let mut i = 0;
    for j in 0..=k {
        if !(sigma > 0.0) {
            return f64::NEG_INFINITY;
        }
        let p = GpdParams { scale: sigma, shape: theta[j + 1] };
        let upper = if j < k { v[j] } else { f64::INFINITY };
        while i < sorted.len() && sorted[i] <= upper {
            let l = gpd_log_pdf(sorted[i] - lower, &p);
            if l == f64::NEG_INFINITY {
                return l;
            }
            total += log_surv + l;
            i += 1;
        }
        if j < k {
            let s = gpd_sf(upper - lower, &p);
            if !(s > 0.0) {
                return f64::NEG_INFINITY;
            }
            log_surv += s.ln();
            sigma += p.shape * (upper - lower);
            lower = upper;
        }
    }
    total
}

/// Fisher information per observation of the piecewise model at a
/// constant-shape point `theta` (unit scale), by quadrature of outer
/// products of numerically differentiated scores over the survival scale.
fn expected_information(v: &[f64], theta: &[f64]) -> DMatrix<f64> {
    let d = theta.len();
    let xi = theta[1];
    let p = GpdParams { scale: 1.0, shape: xi };
    let (nodes, weights) = gauss_legendre(16);
    // survival-probability breakpoints: the thresholds plus a geometric grid
    // towards zero, where scores can grow without bound
    let mut cuts: Vec<f64> = v.iter().map(|&t| gpd_sf(t, &p)).collect();
    cuts.extend((0..=50).map(|i| 0.5f64.powi(i)));
    cuts.push(0.0);
    cuts.sort_by(|a, b| b.total_cmp(a));
    cuts.dedup();
    let mut info = DMatrix::zeros(d, d);
    for w in cuts.windows(2) {
        let (hi, lo) = (w[0], w[1]);
        if !(hi > lo) {
            continue;
        }
        let (mid, half) = (0.5 * (hi + lo), 0.5 * (hi - lo));
        for (z, wt) in nodes.iter().zip(&weights) {
            let s = mid + half * z;
            let y = expm1_ratio(xi, -s.ln());
            let g = DVector::from_vec(gradient(|t| piecewise_gpd_loglik(&[y], v, t), theta));
            if g.iter().all(|x| x.is_finite()) {
                info += &g * g.transpose() * (wt * half);
            }
        }
    }
    info
}

/// Score test of a constant shape against a shape that changes at `k`
/// thresholds placed at the `j/(k+1)` sample quantiles of the excesses.
pub fn rao_score_test(excesses: &[f64], k: usize) -> Result<TestOutcome> {
    if k == 0 {
        return Err(Error::InvalidParameter("need at least one interior threshold".into()));
    }
    let mut y = excesses.to_vec();
    y.sort_by(f64::total_cmp);
    let n = y.len();
    if n < 2 {
        return Err(Error::InsufficientData("too few excesses".into()));
    }
    let v: Vec<f64> = (1..=k)
        .map(|j| {
            let h = (n - 1) as f64 * j as f64 / (k + 1) as f64;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            y[lo] + (h - lo as f64) * (y[hi] - y[lo])
        })
        .collect();
    rao_score_test_at(excesses, &v)
}

/// Score test with explicit interior thresholds `0 < v_1 < ... < v_k`.
pub fn rao_score_test_at(excesses: &[f64], thresholds: &[f64]) -> Result<TestOutcome> {
    let theta = fitted_gpd(excesses)?;
    let k = thresholds.len();
    if k == 0 {
        return Err(Error::InvalidParameter("need at least one interior threshold".into()));
    }
    if !(thresholds[0] > 0.0) || thresholds.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("thresholds must be positive and strictly increasing".into()));
    }
    // Work on the scale of the fitted sigma so derivative steps are relative.
    let c = theta.scale;
    let mut y: Vec<f64> = excesses.iter().map(|v| v / c).collect();
    y.sort_by(f64::total_cmp);
    let v: Vec<f64> = thresholds.iter().map(|t| t / c).collect();
    let mut lower = f64::NEG_INFINITY;
    for j in 0..=k {
        let upper = if j < k { v[j] } else { f64::INFINITY };
        if !y.iter().any(|&x| x > lower && x <= upper) {
            return Err(Error::InvalidInput(format!("interval {j} of the partition holds no excesses")));
        }
        lower = upper;
    }
    let mut x0 = vec![theta.shape; k + 2];
    x0[0] = 1.0;
    let u = gradient(|t| piecewise_gpd_loglik(&y, &v, t), &x0);
    let info = expected_information(&v, &x0) * y.len() as f64;
    if u.iter().chain(info.iter()).any(|x| !x.is_finite()) {
        return Err(Error::Numerical("score or information is not finite at the restricted fit".into()));
    }
    let chol = nalgebra::Cholesky::new(info).ok_or_else(|| Error::Numerical("information matrix is singular".into()))?;
    let uv = DVector::from_vec(u);
    let s = uv.dot(&chol.solve(&uv));
    let chi = ChiSquared::new(k as f64).map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(TestOutcome {
        statistic: s,
        p_value: chi.sf(s),
        theta_hat: Estimate::Gpd(theta),
        method: TestMethod::RaoScore,
        bootstrap_size: 0,
        bootstrap_failures: 0,
        unreliable: false,
        notes: Vec::new(),
    })
}

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::design::ScaledDesign;
use super::{covariance_from_hessian, default_optimizer, Estimate, FitResult, Method};
use crate::dist::{gevr_log_density, GevParams, TopROrderSample};
use crate::error::{Error, Result};
use crate::lmoments::gev_lmom_fit;
use crate::optim::{hessian, nelder_mead};

/// Per-block covariates for a non-stationary fit: identity link for the
/// location and shape, log link for the scale. Each design has `n` rows and
/// an intercept in its first column.
#[derive(Debug, Clone)]
pub struct GevrRegression {
    pub loc: DMatrix<f64>,
    pub log_scale: DMatrix<f64>,
    pub shape: DMatrix<f64>,
}

impl GevrRegression {
    pub fn stationary(n: usize) -> Self {
        let one = DMatrix::from_element(n, 1, 1.0);
        Self { loc: one.clone(), log_scale: one.clone(), shape: one }
    }

    fn validate(&self, n: usize) -> Result<()> {
        for (name, m) in [("location", &self.loc), ("scale", &self.log_scale), ("shape", &self.shape)] {
            if m.nrows() != n {
                return Err(Error::InvalidInput(format!("{name} design has {} rows, sample has {n} blocks", m.nrows())));
            }
            if m.ncols() == 0 || m.column(0).iter().any(|&v| v != 1.0) {
                return Err(Error::InvalidInput(format!("{name} design must start with an intercept column")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionCoefficients {
    pub loc: Vec<f64>,
    pub log_scale: Vec<f64>,
    pub shape: Vec<f64>,
}

/// Negative log-likelihood of a stationary fit.
pub fn gevr_negloglik(sample: &TopROrderSample, p: &GevParams) -> f64 {
    let mut s = 0.0;
    for row in sample.rows() {
        let l = gevr_log_density(row, p);
        if l == f64::NEG_INFINITY {
            return f64::INFINITY;
        }
        s += l;
    }
    -s
}

fn check_sample(sample: &TopROrderSample) -> Result<()> {
    if sample.n() < 3 {
        return Err(Error::InsufficientData(format!("need at least 3 blocks, got {}", sample.n())));
    }
    let first = sample.row(0)[0];
    if sample.rows().all(|row| row.iter().all(|&v| v == first)) || sample.column(0).iter().all(|&v| v == first) {
        return Err(Error::InvalidInput("block maxima are constant".into()));
    }
    Ok(())
}

fn start_values(sample: &TopROrderSample) -> GevParams {
    let x = sample.column(0);
    if let Ok(p) = gev_lmom_fit(&x) {
        if p.shape > -0.5 && p.shape < 0.8 {
            return p;
        }
        return GevParams { shape: p.shape.clamp(-0.4, 0.6), ..p };
    }
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt().max(1e-8);
    let scale = sd * 6f64.sqrt() / std::f64::consts::PI;
    GevParams { loc: m - 0.5772 * scale, scale, shape: 0.1 }
}

/// Stationary or regression maximum likelihood fit of the GEV_r model.
pub fn fit_gevr_mle(sample: &TopROrderSample, spec: Option<&GevrRegression>) -> Result<FitResult> {
    check_sample(sample)?;
    match spec {
        None => Ok(fit_stationary(sample, start_values(sample))),
        Some(spec) => fit_regression(sample, spec),
    }
}

/// Stationary fit started from `start` (used for bootstrap refits).
pub fn fit_gevr_mle_from(sample: &TopROrderSample, start: &GevParams) -> Result<FitResult> {
    check_sample(sample)?;
    Ok(fit_stationary(sample, *start))
}

fn fit_stationary(sample: &TopROrderSample, start: GevParams) -> FitResult {
    let obj = |v: &[f64]| {
        let p = GevParams { loc: v[0], scale: v[1].exp(), shape: v[2] };
        gevr_negloglik(sample, &p)
    };
    let mut x0 = [start.loc, start.scale.ln(), start.shape];
    // Move the start inside the support if the moment-type guess is outside.
    if !obj(&x0).is_finite() {
        x0[2] = 0.0;
    }
    let steps = [0.2 * start.scale, 0.2, 0.1];
    let m = nelder_mead(obj, &x0, &steps, &default_optimizer());
    let est = GevParams { loc: m.x[0], scale: m.x[1].exp(), shape: m.x[2] };
    let nat = |v: &[f64]| {
        if v[1] <= 0.0 {
            return f64::INFINITY;
        }
        gevr_negloglik(sample, &GevParams::from_vec(v))
    };
    let covariance = if m.converged && m.f.is_finite() { covariance_from_hessian(hessian(nat, &est.to_vec())) } else { None };
    FitResult {
        estimate: Estimate::Gev(est),
        max_objective: -m.f,
        covariance,
        converged: m.converged && m.f.is_finite(),
        method: Method::Mle,
        shape_warning: est.shape <= -0.5,
        evals: m.evals,
        trace: Vec::new(),
    }
}

fn fit_regression(sample: &TopROrderSample, spec: &GevrRegression) -> Result<FitResult> {
    let n = sample.n();
    spec.validate(n)?;
    let dl = ScaledDesign::new(&spec.loc, 1);
    let ds = ScaledDesign::new(&spec.log_scale, 1);
    let dx = ScaledDesign::new(&spec.shape, 1);
    let (pl, ps, px) = (dl.ncols(), ds.ncols(), dx.ncols());
    let negll = |v: &[f64]| {
        let mu = dl.linear(&v[..pl]);
        let ls = ds.linear(&v[pl..pl + ps]);
        let xi = dx.linear(&v[pl + ps..]);
        let mut s = 0.0;
        for (i, row) in sample.rows().enumerate() {
            let p = GevParams { loc: mu[i], scale: ls[i].exp(), shape: xi[i] };
            let l = gevr_log_density(row, &p);
            if l == f64::NEG_INFINITY {
                return f64::INFINITY;
            }
            s += l;
        }
        -s
    };
    let st = fit_stationary(sample, start_values(sample));
    let p0 = st.gev().unwrap();
    let mut x0 = vec![0.0; pl + ps + px];
    x0[0] = p0.loc;
    x0[pl] = p0.scale.ln();
    x0[pl + ps] = p0.shape;
    let mut steps = vec![0.05; x0.len()];
    steps[0] = 0.2 * p0.scale;
    steps[pl] = 0.2;
    steps[pl + ps] = 0.1;
    for s in steps.iter_mut().take(pl).skip(1) {
        *s = 0.1 * p0.scale;
    }
    let mut opts = default_optimizer();
    opts.max_evals = 2000 * x0.len();
    let m = nelder_mead(&negll, &x0, &steps, &opts);
    let coef = |v: &[f64]| RegressionCoefficients {
        loc: dl.unscale(&v[..pl]),
        log_scale: ds.unscale(&v[pl..pl + ps]),
        shape: dx.unscale(&v[pl + ps..]),
    };
    let est = coef(&m.x);
    let covariance = if m.converged {
        covariance_from_hessian(hessian(&negll, &m.x)).map(|c| {
            let mut j = DMatrix::zeros(x0.len(), x0.len());
            j.view_mut((0, 0), (pl, pl)).copy_from(&dl.unscale_jacobian());
            j.view_mut((pl, pl), (ps, ps)).copy_from(&ds.unscale_jacobian());
            j.view_mut((pl + ps, pl + ps), (px, px)).copy_from(&dx.unscale_jacobian());
            &j * c * j.transpose()
        })
    } else {
        None
    };
    let xi = dx.linear(&m.x[pl + ps..]);
    Ok(FitResult {
        shape_warning: xi.iter().any(|&v| v <= -0.5),
        estimate: Estimate::GevRegression(est),
        max_objective: -m.f,
        covariance,
        converged: m.converged && m.f.is_finite(),
        method: Method::Mle,
        evals: m.evals,
        trace: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::sample_gevr;
    use crate::rng::rng_from_seed;

    #[test]
    fn requires_three_blocks() {
        let s = TopROrderSample::from_rows(&[vec![2.0, 1.0], vec![3.0, 0.0]]).unwrap();
        assert!(matches!(fit_gevr_mle(&s, None), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn recovers_parameters() {
        let truth = GevParams::new(0.0, 1.0, 0.25).unwrap();
        let s = sample_gevr(3000, 2, &truth, &mut rng_from_seed(11)).unwrap();
        let fit = fit_gevr_mle(&s, None).unwrap();
        assert!(fit.converged);
        let p = fit.gev().unwrap();
        let se = fit.std_errors().unwrap();
        assert!((p.loc - 0.0).abs() < 3.0 * se[0]);
        assert!((p.scale - 1.0).abs() < 3.0 * se[1]);
        assert!((p.shape - 0.25).abs() < 3.0 * se[2]);
    }

    #[test]
    fn regression_with_trend() {
        let n = 400;
        let mut rng = rng_from_seed(5);
        let trend: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let base = GevParams::new(0.0, 1.0, 0.1).unwrap();
        let s0 = sample_gevr(n, 2, &base, &mut rng).unwrap();
        let rows: Vec<Vec<f64>> = s0.rows().enumerate().map(|(i, r)| r.iter().map(|v| v + 2.0 * trend[i]).collect()).collect();
        let s = TopROrderSample::from_rows(&rows).unwrap();
        let mut spec = GevrRegression::stationary(n);
        spec.loc = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { trend[i] });
        let fit = fit_gevr_mle(&s, Some(&spec)).unwrap();
        let Estimate::GevRegression(c) = &fit.estimate else { panic!() };
        let se = fit.std_errors().unwrap();
        assert!((c.loc[1] - 2.0).abs() < 3.0 * se[1], "{:?} {:?}", c, se);
    }
}

//! Flood-index regional model: `mu_st` linear in site indicators and
//! covariates, `sigma_st = gamma_t * mu_st` with `log gamma_t` linear, and
//! `xi_t` linear, fitted to a complete sites-by-periods matrix.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::design::ScaledDesign;
use super::{covariance_from_hessian, Estimate, FitResult, Method};
use crate::dist::{expm1_ratio, gev_cdf, gev_log_pdf, gev_quantile_unchecked, log1p_ratio, GevParams};
use crate::error::{Error, Result};
use crate::lmoments::{gev_lmom_fit, lmom_solve_gev_scalefree, sample_lmoments};
use crate::optim::{hessian, nelder_mead, NelderMead};

/// Observations with one row per site and one column per period.
pub type SiteMatrix = DMatrix<f64>;

#[derive(Debug, Clone)]
pub struct LinkedModelSpec {
    m: usize,
    n: usize,
    /// `(m*n) x (m + p_mu)`, row `s*n + t`; the first `m` columns are site
    /// indicators.
    pub loc_design: DMatrix<f64>,
    /// `n x p_gamma` for `log gamma_t`, intercept first.
    pub propscale_design: DMatrix<f64>,
    /// `n x p_xi` for `xi_t`, intercept first.
    pub shape_design: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    pub beta_mu: Vec<f64>,
    pub beta_gamma: Vec<f64>,
    pub beta_xi: Vec<f64>,
}

impl CoefficientSet {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.beta_mu.clone();
        v.extend_from_slice(&self.beta_gamma);
        v.extend_from_slice(&self.beta_xi);
        v
    }

    pub fn from_vec(v: &[f64], spec: &LinkedModelSpec) -> Self {
        let (a, b) = (spec.n_loc(), spec.n_loc() + spec.n_gamma());
        Self { beta_mu: v[..a].to_vec(), beta_gamma: v[a..b].to_vec(), beta_xi: v[b..].to_vec() }
    }
}

fn site_indicators(m: usize, n: usize, extra: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m * n, m + extra, |row, col| if col < m && row / n == col { 1.0 } else { 0.0 })
}

impl LinkedModelSpec {
    pub fn new(
        m: usize,
        n: usize,
        loc_design: DMatrix<f64>,
        propscale_design: DMatrix<f64>,
        shape_design: DMatrix<f64>,
    ) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::InvalidInput("need at least one site and one period".into()));
        }
        if loc_design.nrows() != m * n || loc_design.ncols() < m {
            return Err(Error::InvalidInput(format!(
                "location design is {}x{}, expected {} rows and at least {m} columns",
                loc_design.nrows(),
                loc_design.ncols(),
                m * n
            )));
        }
        for row in 0..m * n {
            for s in 0..m {
                let want = if row / n == s { 1.0 } else { 0.0 };
                if loc_design[(row, s)] != want {
                    return Err(Error::InvalidInput(format!(
                        "location design row {row}: first {m} columns must be the site indicator"
                    )));
                }
            }
        }
        for (name, d) in [("scale-proportion", &propscale_design), ("shape", &shape_design)] {
            if d.nrows() != n || d.ncols() == 0 || d.column(0).iter().any(|&v| v != 1.0) {
                return Err(Error::InvalidInput(format!("{name} design must have {n} rows and an intercept column")));
            }
        }
        Ok(Self { m, n, loc_design, propscale_design, shape_design })
    }

    pub fn stationary(m: usize, n: usize) -> Self {
        let one = DMatrix::from_element(n, 1, 1.0);
        Self { m, n, loc_design: site_indicators(m, n, 0), propscale_design: one.clone(), shape_design: one }
    }

    /// Location covariates shared by all sites (`n x p`), stationary
    /// scale-proportion and shape.
    pub fn with_location_covariates(m: usize, n: usize, cov: &DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != n {
            return Err(Error::InvalidInput(format!("covariates have {} rows, expected {n}", cov.nrows())));
        }
        let p = cov.ncols();
        let mut loc = site_indicators(m, n, p);
        for s in 0..m {
            for t in 0..n {
                for j in 0..p {
                    loc[(s * n + t, m + j)] = cov[(t, j)];
                }
            }
        }
        let one = DMatrix::from_element(n, 1, 1.0);
        Self::new(m, n, loc, one.clone(), one)
    }

    pub fn sites(&self) -> usize {
        self.m
    }

    pub fn periods(&self) -> usize {
        self.n
    }

    pub fn n_loc(&self) -> usize {
        self.loc_design.ncols()
    }

    pub fn n_gamma(&self) -> usize {
        self.propscale_design.ncols()
    }

    pub fn n_xi(&self) -> usize {
        self.shape_design.ncols()
    }

    pub fn n_params(&self) -> usize {
        self.n_loc() + self.n_gamma() + self.n_xi()
    }

    /// GEV margin of site `s` at covariate rows `(x_mu, x_gamma, x_xi)`,
    /// where `x_mu` excludes the site indicators.
    pub fn margin_at(&self, c: &CoefficientSet, s: usize, x_mu: &[f64], x_gamma: &[f64], x_xi: &[f64]) -> Result<GevParams> {
        if s >= self.m
            || x_mu.len() != self.n_loc() - self.m
            || x_gamma.len() + 1 != self.n_gamma()
            || x_xi.len() + 1 != self.n_xi()
        {
            return Err(Error::InvalidInput("covariate vector does not match the design".into()));
        }
        let mu = c.beta_mu[s] + x_mu.iter().zip(&c.beta_mu[self.m..]).map(|(a, b)| a * b).sum::<f64>();
        let lg = c.beta_gamma[0] + x_gamma.iter().zip(&c.beta_gamma[1..]).map(|(a, b)| a * b).sum::<f64>();
        let xi = c.beta_xi[0] + x_xi.iter().zip(&c.beta_xi[1..]).map(|(a, b)| a * b).sum::<f64>();
        GevParams::new(mu, lg.exp() * mu, xi)
            .map_err(|_| Error::InvalidParameter(format!("implied scale at site {s} is not positive (location {mu})")))
    }

    /// Margin of observation `(s, t)` on the training design.
    pub fn margin(&self, c: &CoefficientSet, s: usize, t: usize) -> Result<GevParams> {
        let row = s * self.n + t;
        let x_mu: Vec<f64> = (self.m..self.n_loc()).map(|j| self.loc_design[(row, j)]).collect();
        let x_g: Vec<f64> = (1..self.n_gamma()).map(|j| self.propscale_design[(t, j)]).collect();
        let x_x: Vec<f64> = (1..self.n_xi()).map(|j| self.shape_design[(t, j)]).collect();
        self.margin_at(c, s, &x_mu, &x_g, &x_x)
    }

    fn check_data(&self, data: &SiteMatrix) -> Result<()> {
        if data.nrows() != self.m || data.ncols() != self.n {
            return Err(Error::InvalidInput(format!(
                "data are {}x{}, model expects {} sites x {} periods",
                data.nrows(),
                data.ncols(),
                self.m,
                self.n
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("data must be complete and finite".into()));
        }
        if self.n < 3 {
            return Err(Error::InsufficientData("need at least 3 periods".into()));
        }
        Ok(())
    }
}

/// `Z = [1 + xi (Y - mu)/sigma]^{1/xi}`: unit Frechet when `Y` has the given
/// GEV law.
pub fn frechet_transform(y: f64, p: &GevParams) -> Result<f64> {
    log1p_ratio(p.shape, (y - p.loc) / p.scale)
        .map(f64::exp)
        .ok_or_else(|| Error::InvalidParameter(format!("{y} is outside the GEV support")))
}

pub fn frechet_inverse(z: f64, p: &GevParams) -> Result<f64> {
    if !(z > 0.0) {
        return Err(Error::InvalidParameter("unit Frechet values must be positive".into()));
    }
    Ok(p.loc + p.scale * expm1_ratio(p.shape, z.ln()))
}

/// Working representation on centered and scaled covariates.
struct Work<'a> {
    data: &'a SiteMatrix,
    m: usize,
    n: usize,
    loc: ScaledDesign,
    gam: ScaledDesign,
    xi: ScaledDesign,
}

struct Margins {
    mu: Vec<f64>,
    gamma: Vec<f64>,
    xi: Vec<f64>,
}

impl<'a> Work<'a> {
    fn new(data: &'a SiteMatrix, spec: &LinkedModelSpec) -> Self {
        Self {
            data,
            m: spec.m,
            n: spec.n,
            loc: ScaledDesign::new(&spec.loc_design, spec.m),
            gam: ScaledDesign::new(&spec.propscale_design, 1),
            xi: ScaledDesign::new(&spec.shape_design, 1),
        }
    }

    fn split<'b>(&self, th: &'b [f64]) -> (&'b [f64], &'b [f64], &'b [f64]) {
        let a = self.loc.ncols();
        let b = a + self.gam.ncols();
        (&th[..a], &th[a..b], &th[b..])
    }

    fn margins(&self, th: &[f64]) -> Option<Margins> {
        let (bm, bg, bx) = self.split(th);
        let mu = self.loc.linear(bm);
        if mu.iter().any(|&v| !(v > 0.0)) {
            return None;
        }
        let gamma: Vec<f64> = self.gam.linear(bg).iter().map(|v| v.exp()).collect();
        Some(Margins { mu: mu.as_slice().to_vec(), gamma, xi: self.xi.linear(bx).as_slice().to_vec() })
    }

    fn params(&self, mg: &Margins, s: usize, t: usize) -> GevParams {
        let mu = mg.mu[s * self.n + t];
        GevParams { loc: mu, scale: mg.gamma[t] * mu, shape: mg.xi[t] }
    }

    fn negloglik(&self, th: &[f64]) -> f64 {
        let Some(mg) = self.margins(th) else { return f64::INFINITY };
        let mut total = 0.0;
        for s in 0..self.m {
            for t in 0..self.n {
                let l = gev_log_pdf(self.data[(s, t)], &self.params(&mg, s, t));
                if l == f64::NEG_INFINITY {
                    return f64::INFINITY;
                }
                total += l;
            }
        }
        -total
    }

    /// Sum over sites of minus log spacings of the probability integral
    /// transforms (equivalently of the unit Frechet values).
    fn spacings(&self, th: &[f64]) -> f64 {
        let Some(mg) = self.margins(th) else { return f64::INFINITY };
        let mut total = 0.0;
        let mut u = vec![0.0; self.n];
        for s in 0..self.m {
            for (t, slot) in u.iter_mut().enumerate() {
                *slot = gev_cdf(self.data[(s, t)], &self.params(&mg, s, t));
            }
            u.sort_by(f64::total_cmp);
            let mut prev = 0.0;
            let mut i = 0;
            while i < self.n {
                let mut mult = 1;
                while i + mult < self.n && u[i + mult] == u[i] {
                    mult += 1;
                }
                let d = u[i] - prev;
                if !(d > 0.0) {
                    return f64::INFINITY;
                }
                total -= mult as f64 * d.ln();
                prev = u[i];
                i += mult;
            }
            let d = 1.0 - prev;
            if !(d > 0.0) {
                return f64::INFINITY;
            }
            total -= d.ln();
        }
        total
    }

    fn n_params(&self) -> usize {
        self.loc.ncols() + self.gam.ncols() + self.xi.ncols()
    }

    fn stationary_index(&self) -> Vec<bool> {
        let (a, g) = (self.loc.ncols(), self.gam.ncols());
        (0..self.n_params()).map(|k| k < self.m || k == a || k == a + g).collect()
    }

    /// Site L-moment locations, then the pooled scale-free solve.
    fn lmom_stationary(&self, y: &SiteMatrix) -> Option<(Vec<f64>, f64, f64)> {
        let mut locs = Vec::with_capacity(self.m);
        for s in 0..self.m {
            let row: Vec<f64> = y.row(s).iter().copied().collect();
            let loc = gev_lmom_fit(&row).ok().map(|p| p.loc).unwrap_or_else(|| row.iter().sum::<f64>() / row.len() as f64);
            if !(loc > 0.0) {
                return None;
            }
            locs.push(loc);
        }
        let pooled: Vec<f64> = (0..self.m).flat_map(|s| y.row(s).iter().map(|v| v / locs[s]).collect::<Vec<_>>()).collect();
        let (l1, l2) = sample_lmoments(&pooled).ok()?;
        let (g0, x0) = lmom_solve_gev_scalefree(l1, l2).ok()?;
        Some((locs, g0, x0))
    }

    fn assemble(&self, locs: &[f64], g0: f64, x0: f64, rest: Option<&[f64]>) -> Vec<f64> {
        let mut th = match rest {
            Some(r) => r.to_vec(),
            None => vec![0.0; self.n_params()],
        };
        let a = self.loc.ncols();
        th[..self.m].copy_from_slice(locs);
        th[a] = g0;
        th[a + self.gam.ncols()] = x0;
        th
    }

    fn steps(&self, th: &[f64]) -> Vec<f64> {
        let a = self.loc.ncols();
        let g = self.gam.ncols();
        let mean_loc = th[..self.m].iter().map(|v| v.abs()).sum::<f64>() / self.m as f64;
        let scale = th[a].exp() * mean_loc;
        (0..th.len())
            .map(|k| {
                if k < self.m {
                    0.1 * scale.max(1e-3 * th[k].abs())
                } else if k < a {
                    0.05 * scale
                } else if k == a {
                    0.1
                } else if k < a + g {
                    0.05
                } else if k == a + g {
                    0.05
                } else {
                    0.02
                }
            })
            .collect()
    }

    fn unscale(&self, th: &[f64]) -> CoefficientSet {
        let (bm, bg, bx) = self.split(th);
        CoefficientSet { beta_mu: self.loc.unscale(bm), beta_gamma: self.gam.unscale(bg), beta_xi: self.xi.unscale(bx) }
    }

    fn jacobian(&self) -> DMatrix<f64> {
        let p = self.n_params();
        let (a, g) = (self.loc.ncols(), self.gam.ncols());
        let mut j = DMatrix::zeros(p, p);
        j.view_mut((0, 0), (a, a)).copy_from(&self.loc.unscale_jacobian());
        j.view_mut((a, a), (g, g)).copy_from(&self.gam.unscale_jacobian());
        j.view_mut((a + g, a + g), (p - a - g, p - a - g)).copy_from(&self.xi.unscale_jacobian());
        j
    }

    fn shapes_ok(&self, th: &[f64]) -> bool {
        self.margins(th).map_or(false, |mg| mg.xi.iter().all(|&x| x > -1.0))
    }

    fn optimizer(&self) -> NelderMead {
        NelderMead { max_evals: 1500 * self.n_params().max(3), ftol: 1e-10, xtol: 1e-7, restarts: 2 }
    }

    /// Iterative hybrid estimator. Returns `(theta, loglik trace, converged)`.
    fn hybrid(&self) -> Option<(Vec<f64>, Vec<f64>, bool)> {
        let (locs, g0, x0) = self.lmom_stationary(self.data)?;
        let stat = self.stationary_index();
        let free: Vec<usize> = (0..stat.len()).filter(|&k| !stat[k]).collect();
        let mut th = self.assemble(&locs, g0, x0, None);
        let mut ll = -self.negloglik(&th);
        if !ll.is_finite() {
            return None;
        }
        let mut trace = vec![ll];
        let a = self.loc.ncols();
        let g = self.gam.ncols();
        for _ in 0..50 {
            // 1. map every observation to the site-stationary margin
            let mg = self.margins(&th)?;
            let mut ytil = self.data.clone();
            for s in 0..self.m {
                let mu_s = th[s];
                let target = GevParams { loc: mu_s, scale: th[a].exp() * mu_s, shape: th[a + g] };
                for t in 0..self.n {
                    let u = gev_cdf(self.data[(s, t)], &self.params(&mg, s, t)).clamp(1e-12, 1.0 - 1e-12);
                    ytil[(s, t)] = gev_quantile_unchecked(u, &target);
                }
            }
            // 2-3. site locations and pooled scale-free L-moments
            let (locs, g0, x0) = self.lmom_stationary(&ytil)?;
            let mut next = self.assemble(&locs, g0, x0, Some(&th));
            // 4. likelihood over the non-stationary coefficients only
            if !free.is_empty() {
                let base = next.clone();
                let sub = |v: &[f64]| {
                    let mut full = base.clone();
                    for (k, &idx) in free.iter().enumerate() {
                        full[idx] = v[k];
                    }
                    self.negloglik(&full)
                };
                let x0v: Vec<f64> = free.iter().map(|&k| base[k]).collect();
                let steps: Vec<f64> = free.iter().map(|&k| self.steps(&base)[k]).collect();
                let opt = nelder_mead(sub, &x0v, &steps, &self.optimizer());
                for (k, &idx) in free.iter().enumerate() {
                    next[idx] = opt.x[k];
                }
            }
            let ll_next = -self.negloglik(&next);
            if !ll_next.is_finite() {
                return Some((th, trace, false));
            }
            if ll_next < ll {
                // The fixed-point map stopped improving; keep the best iterate.
                return Some((th, trace, true));
            }
            trace.push(ll_next);
            let done = (ll_next - ll).abs() < 1e-6;
            th = next;
            ll = ll_next;
            if done {
                return Some((th, trace, true));
            }
        }
        Some((th, trace, false))
    }

    fn minimize(&self, obj: &dyn Fn(&[f64]) -> f64, start: &[f64]) -> (Vec<f64>, f64, bool, usize) {
        let m = nelder_mead(obj, start, &self.steps(start), &self.optimizer());
        let ok = m.converged && m.f.is_finite() && self.shapes_ok(&m.x);
        (m.x, m.f, ok, m.evals)
    }
}

fn validate(data: &SiteMatrix, spec: &LinkedModelSpec) -> Result<()> {
    spec.check_data(data)
}

fn finish(work: &Work, th: Vec<f64>, f: f64, ok: bool, evals: usize, method: Method, obj: &dyn Fn(&[f64]) -> f64) -> FitResult {
    let covariance = if ok {
        covariance_from_hessian(hessian(obj, &th)).map(|c| {
            let j = work.jacobian();
            &j * c * j.transpose()
        })
    } else {
        None
    };
    let shape_warning = work.margins(&th).map_or(true, |mg| mg.xi.iter().any(|&x| x <= -0.5));
    FitResult {
        estimate: Estimate::Rfa(work.unscale(&th)),
        max_objective: -f,
        covariance,
        converged: ok,
        method,
        shape_warning,
        evals,
        trace: Vec::new(),
    }
}

fn fit_with(data: &SiteMatrix, spec: &LinkedModelSpec, method: Method) -> Result<FitResult> {
    validate(data, spec)?;
    let work = Work::new(data, spec);
    let obj = |th: &[f64]| match method {
        Method::Mps => work.spacings(th),
        _ => work.negloglik(th),
    };
    let start = work.lmom_stationary(data).map(|(l, g, x)| work.assemble(&l, g, x, None));
    let mut evals = 0;
    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    if let Some(st) = start.as_ref().filter(|st| obj(st).is_finite()) {
        let (x, f, ok, e) = work.minimize(&obj, st);
        evals += e;
        best = Some((x, f, ok));
    }
    if !best.as_ref().map_or(false, |b| b.2) {
        if let Some((th, _, _)) = work.hybrid().filter(|h| obj(&h.0).is_finite()) {
            let (x, f, ok, e) = work.minimize(&obj, &th);
            evals += e;
            if ok || best.is_none() {
                best = Some((x, f, ok));
            }
        }
    }
    let Some((x, f, ok)) = best else {
        return Err(Error::Numerical("no feasible starting values (site locations must be positive)".into()));
    };
    Ok(finish(&work, x, f, ok, evals, method, &obj))
}

/// Independence likelihood fit.
pub fn fit_rfa_mle(data: &SiteMatrix, spec: &LinkedModelSpec) -> Result<FitResult> {
    fit_with(data, spec, Method::Mle)
}

/// Maximum product spacings fit with within-site spacings.
pub fn fit_rfa_mps(data: &SiteMatrix, spec: &LinkedModelSpec) -> Result<FitResult> {
    fit_with(data, spec, Method::Mps)
}

/// Iterative hybrid L-moment / likelihood fit.
pub fn fit_rfa_hybrid(data: &SiteMatrix, spec: &LinkedModelSpec) -> Result<FitResult> {
    validate(data, spec)?;
    let work = Work::new(data, spec);
    let (th, trace, ok) = work
        .hybrid()
        .ok_or_else(|| Error::Numerical("L-moment step failed (non-positive site location or no shape root)".into()))?;
    let ll = *trace.last().unwrap();
    let shape_warning = work.margins(&th).map_or(true, |mg| mg.xi.iter().any(|&x| x <= -0.5));
    Ok(FitResult {
        estimate: Estimate::Rfa(work.unscale(&th)),
        max_objective: ll,
        covariance: None,
        converged: ok,
        method: Method::Hybrid,
        shape_warning,
        evals: trace.len(),
        trace,
    })
}

/// Fit with the named method; L-moment fits are not available for the
/// regional model on their own.
pub fn fit_rfa(data: &SiteMatrix, spec: &LinkedModelSpec, method: Method) -> Result<FitResult> {
    match method {
        Method::Mle => fit_rfa_mle(data, spec),
        Method::Mps => fit_rfa_mps(data, spec),
        Method::Hybrid => fit_rfa_hybrid(data, spec),
        Method::Lmom => Err(Error::InvalidParameter("use the hybrid method for L-moment regional fits".into())),
    }
}

/// Independence negative log-likelihood at original-scale coefficients.
pub fn rfa_negloglik(data: &SiteMatrix, spec: &LinkedModelSpec, c: &CoefficientSet) -> f64 {
    let mut total = 0.0;
    for s in 0..spec.m {
        for t in 0..spec.n {
            let Ok(p) = spec.margin(c, s, t) else { return f64::INFINITY };
            let l = gev_log_pdf(data[(s, t)], &p);
            if l == f64::NEG_INFINITY {
                return f64::INFINITY;
            }
            total += l;
        }
    }
    -total
}

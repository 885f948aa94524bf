//! Data-generating schemes for the simulation studies and a small
//! experiment runner for rejection rates and estimator error.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Beta, Distribution, Gamma, LogNormal, StandardNormal, Weibull};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::gev_quantile_unchecked;
use crate::dist::{gpd_quantile, kumgev_truncated_draw, sample_gpd, sample_gevr, GevParams, GpdParams, KumGevParams, TopROrderSample};
use crate::error::{Error, Result};
use crate::estimation::{fit_rfa, CoefficientSet, LinkedModelSpec, Method, SiteMatrix};
use crate::gof_gevr::{ed_test, score_test_multiplier, score_test_parametric, TestOutcome};
use crate::gof_gpd::{ad_test, cvm_test, moran_test, rao_score_test, NullTable};
use crate::rng::{derive_seed, open_uniform, rng_from_seed};
use crate::sequential::ThresholdGrid;

/// GEV_4 blocks with a fifth value from the KumGEV law right-truncated at the
/// fourth. `a = b = 1` gives GEV_5 data.
pub fn gen_scheme1_kumgev(n: usize, params: &GevParams, a: f64, b: f64, seed: u64) -> Result<TopROrderSample> {
    let kum = KumGevParams::new(*params, a, b)?;
    let mut rng = rng_from_seed(seed);
    let base = sample_gevr(n, 4, params, &mut rng)?;
    let mut rows = Vec::with_capacity(n);
    for row in base.rows() {
        let y5 = kumgev_truncated_draw(&kum, row[3], &mut rng)?;
        let mut r = row.to_vec();
        r.push(y5);
        rows.push(r);
    }
    TopROrderSample::from_rows(&rows)
}

/// GEV_6 blocks whose fifth value is kept with probability `mix_p` and
/// otherwise replaced by the sixth; the first five columns are returned.
/// `mix_p = 1` gives GEV_5 data. Rows stay strictly decreasing because the
/// sixth value lies below the fourth.
pub fn gen_scheme2_mixing(n: usize, params: &GevParams, mix_p: f64, seed: u64) -> Result<TopROrderSample> {
    if !(0.0..=1.0).contains(&mix_p) {
        return Err(Error::InvalidParameter(format!("mixing rate must be in [0, 1], got {mix_p}")));
    }
    let mut rng = rng_from_seed(seed);
    let base = sample_gevr(n, 6, params, &mut rng)?;
    let rows: Vec<Vec<f64>> = base
        .rows()
        .map(|row| {
            let mut r = row[..5].to_vec();
            if !(rng.gen::<f64>() < mix_p) {
                r[4] = row[5];
            }
            r
        })
        .collect();
    TopROrderSample::from_rows(&rows)
}

/// GEV_7 blocks where the fifth value is a 50/50 choice between the fifth
/// and sixth, and the sixth a 50/50 choice between the sixth and seventh;
/// the first six columns are returned. When the fifth takes the sixth value
/// the sixth takes the seventh, so rows never tie. The first four columns
/// follow GEV_4.
pub fn gen_r_selection_design(n: usize, params: &GevParams, seed: u64) -> Result<TopROrderSample> {
    let mut rng = rng_from_seed(seed);
    let base = sample_gevr(n, 7, params, &mut rng)?;
    let rows: Vec<Vec<f64>> = base
        .rows()
        .map(|row| {
            let mut r = row[..6].to_vec();
            let five_takes_six = rng.gen::<bool>();
            let six_takes_seven = rng.gen::<bool>();
            if five_takes_six {
                r[4] = row[5];
                r[5] = row[6];
            } else if six_takes_seven {
                r[5] = row[6];
            }
            r
        })
        .collect();
    TopROrderSample::from_rows(&rows)
}

/// `n1` values from Beta(2, 1) scaled to (0, 5) followed by `n2` values from
/// the GPD with threshold 5, scale 2 and shape 0.25.
pub fn gen_beta_gpd_splice(n1: usize, n2: usize, seed: u64) -> Result<Vec<f64>> {
    if n1 == 0 || n2 == 0 {
        return Err(Error::InvalidParameter("both parts need at least one value".into()));
    }
    let mut rng = rng_from_seed(seed);
    let beta = Beta::new(2.0, 1.0).expect("valid beta");
    let mut out: Vec<f64> = (0..n1).map(|_| 5.0 * beta.sample(&mut rng)).collect();
    let gpd = GpdParams::new(2.0, 0.25)?;
    out.extend(sample_gpd(n2, &gpd, &mut rng).into_iter().map(|y| 5.0 + y));
    Ok(out)
}

/// Thresholds that drop the lowest `step` observations at a time: the first
/// keeps every positive value (threshold 0), the `j`th sits at the
/// `j * step`th order statistic.
pub fn dropping_threshold_grid(data: &[f64], count: usize, step: usize) -> Result<ThresholdGrid> {
    let mut x = data.to_vec();
    x.sort_by(f64::total_cmp);
    if count == 0 || (count - 1) * step >= x.len() {
        return Err(Error::InvalidParameter("grid drops more observations than available".into()));
    }
    let lowest = x[0].min(0.0);
    let mut u: Vec<f64> = (0..count).map(|j| if j == 0 { lowest } else { x[j * step - 1] }).collect();
    u.dedup();
    ThresholdGrid::new(data, &u)
}

/// Thresholds at the given sample quantiles.
pub fn quantile_threshold_grid(data: &[f64], probs: &[f64]) -> Result<ThresholdGrid> {
    let mut x = data.to_vec();
    x.sort_by(f64::total_cmp);
    if x.is_empty() {
        return Err(Error::InsufficientData("no data".into()));
    }
    let mut u: Vec<f64> = probs
        .iter()
        .map(|&p| {
            let h = (x.len() - 1) as f64 * p;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(x.len() - 1);
            x[lo] + (h - lo as f64) * (x[hi] - x[lo])
        })
        .collect();
    u.dedup();
    ThresholdGrid::new(data, &u)
}

/// Laws used to probe the GPD goodness-of-fit tests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case")]
pub enum ExcessLaw {
    Gamma { shape: f64, scale: f64 },
    /// Log-normal with the given mean and sd on the log scale.
    LogNormal { mu: f64, sigma: f64 },
    Weibull { scale: f64, shape: f64 },
    /// 50/50 mixture of GPD(1, a) and GPD(1, b).
    GpdMix { a: f64, b: f64 },
    Gpd { scale: f64, shape: f64 },
}

impl ExcessLaw {
    pub fn label(&self) -> String {
        match self {
            ExcessLaw::Gamma { shape, scale } => format!("Gamma({shape}, {scale})"),
            ExcessLaw::LogNormal { mu, sigma } => format!("LogNormal({mu}, {sigma})"),
            ExcessLaw::Weibull { scale, shape } => format!("Weibull({scale}, {shape})"),
            ExcessLaw::GpdMix { a, b } => format!("GPDMix({a}, {b})"),
            ExcessLaw::Gpd { scale, shape } => format!("GPD({scale}, {shape})"),
        }
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<f64>> {
        let mut rng = rng_from_seed(seed);
        let bad = |e: String| Error::InvalidParameter(e);
        Ok(match *self {
            ExcessLaw::Gamma { shape, scale } => {
                let d = Gamma::new(shape, scale).map_err(|e| bad(e.to_string()))?;
                (0..n).map(|_| d.sample(&mut rng)).collect()
            }
            ExcessLaw::LogNormal { mu, sigma } => {
                let d = LogNormal::new(mu, sigma).map_err(|e| bad(e.to_string()))?;
                (0..n).map(|_| d.sample(&mut rng)).collect()
            }
            ExcessLaw::Weibull { scale, shape } => {
                let d = Weibull::new(scale, shape).map_err(|e| bad(e.to_string()))?;
                (0..n).map(|_| d.sample(&mut rng)).collect()
            }
            ExcessLaw::GpdMix { a, b } => {
                let (pa, pb) = (GpdParams::new(1.0, a)?, GpdParams::new(1.0, b)?);
                (0..n)
                    .map(|_| {
                        let p = if rng.gen::<bool>() { &pa } else { &pb };
                        gpd_quantile(open_uniform(&mut rng), p)
                    })
                    .collect::<Result<_>>()?
            }
            ExcessLaw::Gpd { scale, shape } => sample_gpd(n, &GpdParams::new(scale, shape)?, &mut rng),
        })
    }
}

/// Exponential correlogram `rho(h) = exp(-h / phi)` between sites.
pub fn exponential_correlation(coords: &[(f64, f64)], phi: f64) -> DMatrix<f64> {
    let m = coords.len();
    DMatrix::from_fn(m, m, |i, j| {
        let h = ((coords[i].0 - coords[j].0).powi(2) + (coords[i].1 - coords[j].1).powi(2)).sqrt();
        if i == j {
            1.0
        } else {
            (-h / phi).exp()
        }
    })
}

/// Sites-by-periods matrix with a Gaussian copula across sites (independent
/// over periods) and GEV margins `margins(s, t)`. `phi = None` gives
/// independent sites.
pub fn gen_gaussian_copula_sites(
    m: usize,
    n: usize,
    coords: &[(f64, f64)],
    phi: Option<f64>,
    margins: impl Fn(usize, usize) -> GevParams,
    seed: u64,
) -> Result<SiteMatrix> {
    if coords.len() != m {
        return Err(Error::InvalidInput(format!("{} coordinates for {m} sites", coords.len())));
    }
    let chol = match phi {
        None => None,
        Some(phi) => {
            if !(phi > 0.0) {
                return Err(Error::InvalidParameter(format!("range must be positive, got {phi}")));
            }
            let c = exponential_correlation(coords, phi);
            let l = Cholesky::new(c.clone())
                .or_else(|| Cholesky::new(c + DMatrix::identity(m, m) * 1e-10))
                .ok_or_else(|| Error::Numerical("site correlation matrix is not positive definite".into()))?;
            Some(l.l())
        }
    };
    let mut rng = rng_from_seed(seed);
    let normal = statrs::distribution::Normal::new(0.0, 1.0).unwrap();
    let mut out = DMatrix::zeros(m, n);
    for t in 0..n {
        let z = DVector::from_fn(m, |_, _| StandardNormal.sample(&mut rng));
        let z = match &chol {
            Some(l) => l * z,
            None => z,
        };
        for s in 0..m {
            use statrs::distribution::ContinuousCDF;
            let u = normal.cdf(z[s]).clamp(1e-300, 1.0 - 1e-16);
            out[(s, t)] = gev_quantile_unchecked(u, &margins(s, t));
        }
    }
    Ok(out)
}

/// True regional model for the estimator study: location intercepts per
/// site plus one shared covariate, stationary scale proportion and shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfaTruth {
    pub site_means: Vec<f64>,
    pub coords: Vec<(f64, f64)>,
    /// Covariate value per period.
    pub covariate: Vec<f64>,
    pub beta_cov: f64,
    pub beta_gamma0: f64,
    pub beta_xi0: f64,
}

impl RfaTruth {
    /// Site means from N(5.344, 1.865) kept only where every period's
    /// location stays positive, coordinates uniform on [0, 10]^2 and a
    /// standard normal covariate series.
    pub fn generate(m: usize, n: usize, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let covariate: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let beta_cov = 0.003;
        let lowest = covariate.iter().map(|c| beta_cov * c).fold(f64::INFINITY, f64::min);
        let site_means = (0..m)
            .map(|_| loop {
                let z: f64 = StandardNormal.sample(&mut rng);
                let v = 5.344 + 1.865 * z;
                if v + lowest > 0.0 {
                    break v;
                }
            })
            .collect();
        let coords = (0..m).map(|_| (10.0 * rng.gen::<f64>(), 10.0 * rng.gen::<f64>())).collect();
        RfaTruth { site_means, coords, covariate, beta_cov, beta_gamma0: -1.041, beta_xi0: -0.0186 }
    }

    pub fn spec(&self) -> Result<LinkedModelSpec> {
        let n = self.covariate.len();
        let cov = DMatrix::from_column_slice(n, 1, &self.covariate);
        LinkedModelSpec::with_location_covariates(self.site_means.len(), n, &cov)
    }

    pub fn coefficients(&self) -> CoefficientSet {
        let mut beta_mu = self.site_means.clone();
        beta_mu.push(self.beta_cov);
        CoefficientSet { beta_mu, beta_gamma: vec![self.beta_gamma0], beta_xi: vec![self.beta_xi0] }
    }

    pub fn margin(&self, s: usize, t: usize) -> GevParams {
        let mu = self.site_means[s] + self.beta_cov * self.covariate[t];
        GevParams { loc: mu, scale: self.beta_gamma0.exp() * mu, shape: self.beta_xi0 }
    }

    pub fn simulate(&self, phi: Option<f64>, seed: u64) -> Result<SiteMatrix> {
        gen_gaussian_copula_sites(self.site_means.len(), self.covariate.len(), &self.coords, phi, |s, t| self.margin(s, t), seed)
    }
}

/// Root mean square of the squared errors after dropping the largest
/// `trim` fraction.
pub fn trimmed_rmse(sq_errors: &[f64], trim: f64) -> f64 {
    let mut v: Vec<f64> = sq_errors.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let keep = v.len() - ((v.len() as f64 * trim).floor() as usize).min(v.len() - 1);
    (v[..keep].iter().sum::<f64>() / keep as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "kebab-case")]
pub enum SchemeSpec {
    KumgevContam { n: usize, gev: GevParams, a: f64, b: f64 },
    OrderMixing { n: usize, gev: GevParams, mix_p: f64 },
    PureGevr { n: usize, r: usize, gev: GevParams },
    PureGpd { n: usize, gpd: GpdParams },
    Excesses { n: usize, law: ExcessLaw },
    BetaGpdSplice { n1: usize, n2: usize },
    /// Regional data; `phi = None` for independent sites.
    GaussianCopulaSites { m: usize, n: usize, phi: Option<f64> },
}

impl SchemeSpec {
    pub fn name(&self) -> &'static str {
        match self {
            SchemeSpec::KumgevContam { .. } => "kumgev_contam",
            SchemeSpec::OrderMixing { .. } => "order_mixing",
            SchemeSpec::PureGevr { .. } => "pure_gevr",
            SchemeSpec::PureGpd { .. } => "pure_gpd",
            SchemeSpec::Excesses { .. } => "excesses",
            SchemeSpec::BetaGpdSplice { .. } => "beta_gpd_splice",
            SchemeSpec::GaussianCopulaSites { .. } => "gaussian_copula_sites",
        }
    }

    pub fn params(&self) -> String {
        let g = |p: &GevParams| format!("mu={};sigma={};xi={}", p.loc, p.scale, p.shape);
        match self {
            SchemeSpec::KumgevContam { n, gev, a, b } => format!("n={n};{};a={a};b={b}", g(gev)),
            SchemeSpec::OrderMixing { n, gev, mix_p } => format!("n={n};{};p={mix_p}", g(gev)),
            SchemeSpec::PureGevr { n, r, gev } => format!("n={n};r={r};{}", g(gev)),
            SchemeSpec::PureGpd { n, gpd } => format!("n={n};sigma={};xi={}", gpd.scale, gpd.shape),
            SchemeSpec::Excesses { n, law } => format!("n={n};law={}", law.label()),
            SchemeSpec::BetaGpdSplice { n1, n2 } => format!("n1={n1};n2={n2}"),
            SchemeSpec::GaussianCopulaSites { m, n, phi } => match phi {
                Some(phi) => format!("m={m};n={n};phi={phi}"),
                None => format!("m={m};n={n};independent"),
            },
        }
    }

    fn block_sample(&self, seed: u64) -> Result<TopROrderSample> {
        match self {
            SchemeSpec::KumgevContam { n, gev, a, b } => gen_scheme1_kumgev(*n, gev, *a, *b, seed),
            SchemeSpec::OrderMixing { n, gev, mix_p } => gen_scheme2_mixing(*n, gev, *mix_p, seed),
            SchemeSpec::PureGevr { n, r, gev } => sample_gevr(*n, *r, gev, &mut rng_from_seed(seed)),
            _ => Err(Error::InvalidParameter(format!("{} does not produce top-r blocks", self.name()))),
        }
    }

    fn excesses(&self, seed: u64) -> Result<Vec<f64>> {
        match self {
            SchemeSpec::PureGpd { n, gpd } => Ok(sample_gpd(*n, gpd, &mut rng_from_seed(seed))),
            SchemeSpec::Excesses { n, law } => law.sample(*n, seed),
            SchemeSpec::BetaGpdSplice { n1, n2 } => gen_beta_gpd_splice(*n1, *n2, seed),
            _ => Err(Error::InvalidParameter(format!("{} does not produce excesses", self.name()))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubjectTest {
    Ed,
    ScoreParametric { bootstrap: usize },
    ScoreMultiplier { bootstrap: usize },
    Ad,
    Cvm,
    Moran,
    /// Rao's test with thresholds at the deciles of the excesses.
    Rao,
}

impl SubjectTest {
    fn label(&self) -> String {
        match self {
            SubjectTest::Ed => "ed".into(),
            SubjectTest::ScoreParametric { bootstrap } => format!("score-pb(L={bootstrap})"),
            SubjectTest::ScoreMultiplier { bootstrap } => format!("score-mb(L={bootstrap})"),
            SubjectTest::Ad => "ad".into(),
            SubjectTest::Cvm => "cvm".into(),
            SubjectTest::Moran => "moran".into(),
            SubjectTest::Rao => "rao".into(),
        }
    }

    fn run(&self, scheme: &SchemeSpec, seed: u64, table: Option<&NullTable>) -> Result<TestOutcome> {
        let data_seed = derive_seed(seed, 0);
        let test_seed = derive_seed(seed, 1);
        match self {
            SubjectTest::Ed => ed_test(&scheme.block_sample(data_seed)?),
            SubjectTest::ScoreParametric { bootstrap } => {
                score_test_parametric(&scheme.block_sample(data_seed)?, *bootstrap, test_seed)
            }
            SubjectTest::ScoreMultiplier { bootstrap } => {
                score_test_multiplier(&scheme.block_sample(data_seed)?, *bootstrap, test_seed)
            }
            SubjectTest::Ad => ad_test(&scheme.excesses(data_seed)?, table.expect("table loaded")),
            SubjectTest::Cvm => cvm_test(&scheme.excesses(data_seed)?, table.expect("table loaded")),
            SubjectTest::Moran => moran_test(&scheme.excesses(data_seed)?),
            SubjectTest::Rao => rao_score_test(&scheme.excesses(data_seed)?, 9),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "subject", rename_all = "kebab-case")]
pub enum Subject {
    /// Rejection rate of a test at level `alpha`.
    Test { test: SubjectTest },
    /// Trimmed RMSE of the scale-proportion and shape intercepts, and
    /// failure counts, for each regional estimator.
    Estimators { methods: Vec<Method> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scheme: String,
    pub params: String,
    pub subject: String,
    pub metric: String,
    pub value: f64,
    pub mc_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub rows: Vec<SummaryRow>,
}

impl ExperimentSummary {
    pub fn get(&self, subject: &str, metric: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.subject == subject && r.metric == metric).map(|r| r.value)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("scheme,params,subject,metric,value,mc_error\n");
        for r in &self.rows {
            let (a, b, c, d) = (quote(&r.scheme), quote(&r.params), quote(&r.subject), quote(&r.metric));
            s.push_str(&format!("{a},{b},{c},{d},{:.6},{:.6}\n", r.value, r.mc_error));
        }
        s
    }
}

fn quote(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Squared error trim used for the estimator study.
pub const RMSE_TRIM: f64 = 0.02;

/// Run `replicates` draws of `scheme` through `subject`. Replicate `k` uses
/// seed `derive_seed(seed, k)`; results are independent of thread count.
pub fn run_experiment(scheme: &SchemeSpec, subject: &Subject, replicates: usize, alpha: f64, seed: u64) -> Result<ExperimentSummary> {
    if replicates == 0 {
        return Err(Error::InvalidParameter("need at least one replicate".into()));
    }
    let base = |subject: String, metric: &str, value: f64, mc_error: f64| SummaryRow {
        scheme: scheme.name().into(),
        params: scheme.params(),
        subject,
        metric: metric.into(),
        value,
        mc_error,
    };
    match subject {
        Subject::Test { test } => {
            let table = match test {
                SubjectTest::Ad | SubjectTest::Cvm => Some(NullTable::default_table()?),
                _ => None,
            };
            let p: Vec<Option<f64>> = (0..replicates as u64)
                .into_par_iter()
                .map(|k| test.run(scheme, derive_seed(seed, k), table).ok().map(|o| o.p_value))
                .collect();
            let used: Vec<f64> = p.into_iter().flatten().collect();
            let failed = replicates - used.len();
            let rate = used.iter().filter(|&&v| v < alpha).count() as f64 / used.len().max(1) as f64;
            let se = (rate * (1.0 - rate) / used.len().max(1) as f64).sqrt();
            Ok(ExperimentSummary {
                rows: vec![
                    base(test.label(), "rejection_rate", rate, se),
                    base(test.label(), "failures", failed as f64, 0.0),
                ],
            })
        }
        Subject::Estimators { methods } => {
            let SchemeSpec::GaussianCopulaSites { m, n, phi } = *scheme else {
                return Err(Error::InvalidParameter("estimator studies need regional data".into()));
            };
            let truth = RfaTruth::generate(m, n, derive_seed(seed, u64::MAX));
            let spec = truth.spec()?;
            let per_rep: Vec<Vec<Option<(f64, f64)>>> = (0..replicates as u64)
                .into_par_iter()
                .map(|k| {
                    let Ok(data) = truth.simulate(phi, derive_seed(seed, k)) else {
                        return vec![None; methods.len()];
                    };
                    methods
                        .iter()
                        .map(|&meth| {
                            let f = fit_rfa(&data, &spec, meth).ok().filter(|f| f.converged)?;
                            let c = f.rfa()?;
                            let (g, x) = (c.beta_gamma[0], c.beta_xi[0]);
                            (g.is_finite() && x.is_finite() && x > -1.0)
                                .then(|| ((g - truth.beta_gamma0).powi(2), (x - truth.beta_xi0).powi(2)))
                        })
                        .collect()
                })
                .collect();
            let mut rows = Vec::new();
            for (j, meth) in methods.iter().enumerate() {
                let ok: Vec<(f64, f64)> = per_rep.iter().filter_map(|r| r[j]).collect();
                let failed = replicates - ok.len();
                for (name, sq) in [
                    ("trimmed_rmse_beta_gamma0", ok.iter().map(|v| v.0).collect::<Vec<_>>()),
                    ("trimmed_rmse_beta_xi0", ok.iter().map(|v| v.1).collect::<Vec<_>>()),
                ] {
                    let rmse = trimmed_rmse(&sq, RMSE_TRIM);
                    let sd = {
                        let mean = sq.iter().sum::<f64>() / sq.len().max(1) as f64;
                        (sq.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / sq.len().max(2) as f64).sqrt()
                    };
                    let mc = sd / (2.0 * rmse * (sq.len().max(1) as f64).sqrt());
                    rows.push(base(meth.as_str().into(), name, rmse, mc));
                }
                rows.push(base(meth.as_str().into(), "failures", failed as f64, 0.0));
            }
            Ok(ExperimentSummary { rows })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trimming_drops_the_largest() {
        let mut v: Vec<f64> = vec![1.0; 98];
        v.extend([1e6, 1e6]);
        assert!((trimmed_rmse(&v, 0.02) - 1.0).abs() < 1e-12);
        assert!(trimmed_rmse(&v, 0.0) > 100.0);
    }

    #[test]
    fn schemes_are_valid_and_reproducible() {
        let p = GevParams::new(0.0, 1.0, 0.25).unwrap();
        let a = gen_scheme1_kumgev(50, &p, 0.6, 0.6, 9).unwrap();
        assert_eq!(a, gen_scheme1_kumgev(50, &p, 0.6, 0.6, 9).unwrap());
        assert_eq!(a.r(), 5);
        let b = gen_scheme2_mixing(50, &p, 0.5, 9).unwrap();
        assert_eq!(b.r(), 5);
        let c = gen_r_selection_design(50, &p, 9).unwrap();
        assert_eq!(c.r(), 6);
        let s = gen_beta_gpd_splice(500, 500, 3).unwrap();
        assert!(s.iter().all(|&v| v >= 0.0));
        assert_eq!(s.iter().filter(|&&v| v > 5.0).count(), 500);
        let g = dropping_threshold_grid(&s, 50, 15).unwrap();
        assert_eq!(g.len(), 50);
        assert_eq!(g.counts[0], 1000);
        assert_eq!(g.counts[49], 1000 - 49 * 15);
    }

    #[test]
    fn copula_limits() {
        let coords = [(1.0, 1.0), (1.0, 1.0), (9.0, 9.0)];
        let p = GevParams::new(0.0, 1.0, 0.0).unwrap();
        let y = gen_gaussian_copula_sites(3, 200, &coords, Some(6.0), |_, _| p, 4).unwrap();
        for t in 0..200 {
            assert!((y[(0, t)] - y[(1, t)]).abs() < 1e-3);
        }
    }
}

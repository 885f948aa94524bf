//! Maximum likelihood, maximum product spacings, L-moment and hybrid fits.

mod design;
mod gevr;
mod gpd;
mod mps;
mod rfa;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dist::{GevParams, GpdParams};
use crate::optim::NelderMead;

pub use design::ScaledDesign;
pub use gevr::{fit_gevr_mle, fit_gevr_mle_from, gevr_negloglik, GevrRegression, RegressionCoefficients};
pub use gpd::{fit_gpd_mle, gpd_negloglik, gpd_pwm};
pub use mps::{fit_mps, mps_objective, Family};
pub use rfa::{
    fit_rfa, fit_rfa_hybrid, fit_rfa_mle, fit_rfa_mps, frechet_inverse, frechet_transform, rfa_negloglik, CoefficientSet,
    LinkedModelSpec, SiteMatrix,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mle,
    Mps,
    Hybrid,
    Lmom,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Mle => "mle",
            Method::Mps => "mps",
            Method::Hybrid => "hybrid",
            Method::Lmom => "lmom",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Estimate {
    Gev(GevParams),
    Gpd(GpdParams),
    GevRegression(RegressionCoefficients),
    Rfa(CoefficientSet),
}

/// Outcome of a fit.
///
/// A fit that did not converge is still returned, with `converged = false`
/// and the last iterate as `estimate`; callers must check the flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub estimate: Estimate,
    /// Log-likelihood for likelihood fits, minus the spacing objective for
    /// product-spacing fits.
    pub max_objective: f64,
    /// Inverse observed information in the natural parameterization.
    #[serde(skip)]
    pub covariance: Option<DMatrix<f64>>,
    pub converged: bool,
    pub method: Method,
    /// Set when the shape estimate is at or below -0.5, where the usual
    /// likelihood asymptotics no longer hold.
    pub shape_warning: bool,
    pub evals: usize,
    /// Objective value after each outer iteration (hybrid fits only).
    pub trace: Vec<f64>,
}

impl FitResult {
    pub fn gev(&self) -> Option<GevParams> {
        match self.estimate {
            Estimate::Gev(p) => Some(p),
            _ => None,
        }
    }

    pub fn gpd(&self) -> Option<GpdParams> {
        match self.estimate {
            Estimate::Gpd(p) => Some(p),
            _ => None,
        }
    }

    pub fn rfa(&self) -> Option<&CoefficientSet> {
        match &self.estimate {
            Estimate::Rfa(c) => Some(c),
            _ => None,
        }
    }

    /// Standard errors from the covariance diagonal.
    pub fn std_errors(&self) -> Option<Vec<f64>> {
        self.covariance.as_ref().map(|c| (0..c.nrows()).map(|i| c[(i, i)].max(0.0).sqrt()).collect())
    }
}

pub(crate) fn default_optimizer() -> NelderMead {
    NelderMead { max_evals: 3000, ftol: 1e-10, xtol: 1e-7, restarts: 2 }
}

/// Invert a Hessian of a negative log objective; `None` unless positive
/// definite.
pub(crate) fn covariance_from_hessian(mut h: DMatrix<f64>) -> Option<DMatrix<f64>> {
    if h.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let t = h.transpose();
    h = (h + t) * 0.5;
    let chol = nalgebra::Cholesky::new(h)?;
    let inv = chol.inverse();
    let t = inv.transpose();
    Some((inv + t) * 0.5)
}

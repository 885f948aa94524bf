//! Sample L-moments and L-moment fits of the GEV.

use statrs::function::gamma::{gamma, ln_gamma};

use crate::dist::GevParams;
use crate::error::{Error, Result};
use crate::optim::bisect;

const EULER: f64 = 0.577_215_664_901_532_9;

/// First three sample L-moments `(l1, l2, l3)` from unbiased probability
/// weighted moments of the order statistics.
pub fn sample_lmoments3(data: &[f64]) -> Result<(f64, f64, f64)> {
    let n = data.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!("need at least 3 values, got {n}")));
    }
    let mut x = data.to_vec();
    x.sort_by(f64::total_cmp);
    let nf = n as f64;
    let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
    for (i, &v) in x.iter().enumerate() {
        let j = i as f64;
        b0 += v;
        b1 += v * j / (nf - 1.0);
        b2 += v * j * (j - 1.0) / ((nf - 1.0) * (nf - 2.0));
    }
    b0 /= nf;
    b1 /= nf;
    b2 /= nf;
    Ok((b0, 2.0 * b1 - b0, 6.0 * b2 - 6.0 * b1 + b0))
}

/// First two sample L-moments.
///
/// `l2 = (1/2) * C(n,2)^{-1} * sum_i ((i-1) - (n-i)) y_(i)`, which is half the
/// mean absolute difference over all pairs.
pub fn sample_lmoments(data: &[f64]) -> Result<(f64, f64)> {
    let n = data.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 values, got {n}")));
    }
    let mut x = data.to_vec();
    x.sort_by(f64::total_cmp);
    let nf = n as f64;
    let l1 = x.iter().sum::<f64>() / nf;
    let s: f64 = x.iter().enumerate().map(|(i, &v)| ((i as f64) - (nf - 1.0 - i as f64)) * v).sum();
    Ok((l1, 0.5 * s * 2.0 / (nf * (nf - 1.0))))
}

/// `(Gamma(1 - xi) - 1) / xi`, continuous at zero.
fn gamma_m1_ratio(xi: f64) -> f64 {
    if xi.abs() < 1e-6 {
        EULER + (0.5 * EULER * EULER + std::f64::consts::PI.powi(2) / 12.0) * xi
    } else {
        ln_gamma(1.0 - xi).exp_m1() / xi
    }
}

/// `(2^xi - 1) / xi`, continuous at zero.
fn pow2_m1_ratio(xi: f64) -> f64 {
    let l2 = std::f64::consts::LN_2;
    if xi.abs() < 1e-10 {
        l2
    } else {
        (xi * l2).exp_m1() / xi
    }
}

/// First two population L-moments of `Y/mu` under the flood-index model
/// with `sigma/mu = exp(beta_gamma0)` and shape `beta_xi0`.
pub fn scalefree_population_lmoments(beta_gamma0: f64, beta_xi0: f64) -> (f64, f64) {
    let g = beta_gamma0.exp();
    let xi = beta_xi0;
    let i1 = 1.0 + g * gamma_m1_ratio(xi);
    let i2 = g * pow2_m1_ratio(xi) * gamma(1.0 - xi);
    (i1, i2)
}

/// Solve the two scale-free L-moment equations for `(beta_gamma0, beta_xi0)`
/// with `beta_xi0` restricted to `(-1, 1)`.
pub fn lmom_solve_gev_scalefree(l1: f64, l2: f64) -> Result<(f64, f64)> {
    if !(l2 > 0.0) || !l1.is_finite() || !l2.is_finite() {
        return Err(Error::InvalidInput(format!("need l2 > 0, got {l2}")));
    }
    // (l1 - 1)/l2 = h(xi) with h increasing from 0 (xi -> -1) to 1 (xi -> 1)
    let target = (l1 - 1.0) / l2;
    let h = |xi: f64| gamma_m1_ratio(xi) / (pow2_m1_ratio(xi) * gamma(1.0 - xi)) - target;
    let xi = bisect(h, -1.0 + 1e-9, 1.0 - 1e-9, 1e-15, 300)
        .ok_or_else(|| Error::Numerical(format!("no shape in (-1, 1) matches l1={l1}, l2={l2}")))?;
    let g = l2 / (pow2_m1_ratio(xi) * gamma(1.0 - xi));
    Ok((g.ln(), xi))
}

/// GEV fit by matching the first three L-moments.
pub fn gev_lmom_fit(data: &[f64]) -> Result<GevParams> {
    let (l1, l2, l3) = sample_lmoments3(data)?;
    if !(l2 > 0.0) {
        return Err(Error::InvalidInput("data are constant".into()));
    }
    let t3 = (l3 / l2).clamp(-0.95, 0.95);
    // t3 = 2(1 - 3^{-k})/(1 - 2^{-k}) - 3 with k = -xi
    let tau3 = |xi: f64| {
        if xi.abs() < 1e-8 {
            2.0 * 3f64.ln() / 2f64.ln() - 3.0
        } else {
            2.0 * (xi * 3f64.ln()).exp_m1() / (xi * 2f64.ln()).exp_m1() - 3.0
        }
    };
    let xi = bisect(|x| tau3(x) - t3, -5.0, 0.999, 1e-13, 300)
        .ok_or_else(|| Error::Numerical(format!("no GEV shape matches t3 = {t3}")))?;
    // l2 = sigma * (2^xi - 1) Gamma(1 - xi) / xi ; l1 = mu + sigma (Gamma(1 - xi) - 1)/xi
    let scale = l2 / (pow2_m1_ratio(xi) * gamma(1.0 - xi));
    let loc = l1 - scale * gamma_m1_ratio(xi);
    GevParams::new(loc, scale, xi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_lmoments() {
        let (l1, l2) = sample_lmoments(&[0.0, 1.0]).unwrap();
        assert_eq!(l1, 0.5);
        assert!((l2 - 0.5).abs() < 1e-15);
        let (_, l2) = sample_lmoments(&[3.0; 6]).unwrap();
        assert_eq!(l2, 0.0);
    }

    #[test]
    fn two_and_three_moment_forms_agree() {
        let x = [0.3, 2.0, -1.0, 4.5, 0.9, 1.1];
        let (a1, a2) = sample_lmoments(&x).unwrap();
        let (b1, b2, _) = sample_lmoments3(&x).unwrap();
        assert!((a1 - b1).abs() < 1e-14 && (a2 - b2).abs() < 1e-14);
    }

    #[test]
    fn scalefree_round_trip() {
        let (i1, i2) = scalefree_population_lmoments(-1.041, -0.0186);
        let (g, xi) = lmom_solve_gev_scalefree(i1, i2).unwrap();
        assert!((g + 1.041).abs() < 1e-8, "{g}");
        assert!((xi + 0.0186).abs() < 1e-8, "{xi}");
    }

    #[test]
    fn scalefree_continuity_at_zero() {
        let a = scalefree_population_lmoments(-1.0, 1e-6);
        let b = scalefree_population_lmoments(-1.0, -1e-6);
        let sa = lmom_solve_gev_scalefree(a.0, a.1).unwrap();
        let sb = lmom_solve_gev_scalefree(b.0, b.1).unwrap();
        assert!((sa.0 - sb.0).abs() < 1e-4 && (sa.1 - sb.1).abs() < 1e-4);
        assert!(lmom_solve_gev_scalefree(1.2, 0.0).is_err());
        assert!(lmom_solve_gev_scalefree(1.2, -0.1).is_err());
    }
}

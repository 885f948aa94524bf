mod common;

use common::{ks_critical_01, ks_distance, ks_two_sample, ks_two_sample_critical_01};
use evkit::dist::{
    gev_cdf, gev_pdf, gev_quantile, gevr_log_density, gpd_cdf, gpd_log_pdf, gpd_quantile, kumgev_cdf, kumgev_truncated_draw,
    sample_gev, sample_gevr, sample_gpd,
};
use evkit::estimation::frechet_transform;
use evkit::optim::gauss_legendre;
use evkit::rng::rng_from_seed;
use evkit::{GevParams, GpdParams, KumGevParams};

fn gev(mu: f64, sigma: f64, xi: f64) -> GevParams {
    GevParams::new(mu, sigma, xi).unwrap()
}

/// Composite Gauss-Legendre on [a, b] with `panels` equal pieces.
fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let (x, w) = gauss_legendre(8);
    let h = (b - a) / panels as f64;
    let mut s = 0.0;
    for k in 0..panels {
        let (lo, hi) = (a + k as f64 * h, a + (k + 1) as f64 * h);
        let (c, r) = ((lo + hi) / 2.0, (hi - lo) / 2.0);
        s += x.iter().zip(&w).map(|(xi, wi)| wi * r * f(c + r * xi)).sum::<f64>();
    }
    s
}

#[test]
fn closed_form_values() {
    assert!((gev_quantile(0.99, &gev(0.0, 1.0, 0.0)).unwrap() - 4.600149226776579).abs() < 1e-12);
    let q = gev_quantile(0.5, &gev(0.0, 1.0, 0.5)).unwrap();
    assert!((q - ((2f64.ln()).powf(-0.5) - 1.0) / 0.5).abs() < 1e-12);
    assert!((q - 0.4023).abs() < 1e-4);
    assert!((gpd_quantile(0.5, &GpdParams::new(1.0, 0.0).unwrap()).unwrap() - 2f64.ln()).abs() < 1e-12);
    assert!((gpd_cdf(1.0, &GpdParams::new(1.0, 1.0).unwrap()) - 0.5).abs() < 1e-15);
    let g0 = gev_cdf(1.0, &gev(0.0, 1.0, 0.0));
    assert!((g0 - (-(-1f64).exp()).exp()).abs() < 1e-15);
    assert!((gev_cdf(1.0, &gev(0.0, 1.0, 1e-9)) - g0).abs() < 1e-8);
}

#[test]
fn shape_continuity_near_zero() {
    for xi in [1e-7, -1e-7] {
        let (a, b) = (gev(0.0, 1.0, xi), gev(0.0, 1.0, 0.0));
        let (ga, gb) = (GpdParams::new(1.0, xi).unwrap(), GpdParams::new(1.0, 0.0).unwrap());
        for i in 0..=70 {
            let y = -2.0 + 0.1 * i as f64;
            assert!((gev_cdf(y, &a) - gev_cdf(y, &b)).abs() < 1e-6, "cdf at {y}");
            assert!((gev_pdf(y, &a) - gev_pdf(y, &b)).abs() < 1e-6, "pdf at {y}");
            if y >= 0.0 {
                assert!((gpd_cdf(y, &ga) - gpd_cdf(y, &gb)).abs() < 1e-6);
                assert!((gpd_log_pdf(y, &ga).exp() - gpd_log_pdf(y, &gb).exp()).abs() < 1e-6);
            }
        }
        for i in 1..=18 {
            let p = 0.05 * i as f64;
            assert!((gev_quantile(p, &a).unwrap() - gev_quantile(p, &b).unwrap()).abs() < 1e-6);
            assert!((gpd_quantile(p, &ga).unwrap() - gpd_quantile(p, &gb).unwrap()).abs() < 1e-6);
        }
    }
}

#[test]
fn density_integrates_to_one() {
    for xi in [-0.4, 0.0, 0.5] {
        let p = gev(0.0, 1.0, xi);
        let lo = gev_quantile(1e-300f64.max(f64::MIN_POSITIVE), &p).unwrap().max(-40.0);
        let hi = gev_quantile(1.0 - 1e-13, &p).unwrap();
        // y = sinh(s) spreads nodes over heavy tails
        let total = integrate(|s| gev_pdf(s.sinh(), &p) * s.cosh(), lo.asinh(), hi.asinh(), 4000);
        assert!((total - 1.0).abs() < 1e-6, "xi = {xi}: {total}");
    }
}

#[test]
fn gevr_r1_is_gev_density() {
    for xi in [-0.3, 0.0, 0.4] {
        let p = gev(1.0, 2.0, xi);
        for i in 0..40 {
            let y = -1.0 + 0.2 * i as f64;
            let f = gev_pdf(y, &p);
            if f > 0.0 {
                assert!((gevr_log_density(&[y], &p).exp() - f).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn gevr_factorizes_into_truncated_chain() {
    // log f(y1, y2) = log g(y1) + log [g(y2) / G(y1)]
    let p = gev(0.0, 1.0, 0.0);
    let v = gevr_log_density(&[1.0, 0.0], &p);
    assert!((v - (-2.0)).abs() < 1e-12);
    for (y1, y2) in [(1.0, 0.0), (2.5, -0.3), (0.4, 0.1)] {
        for xi in [-0.2, 0.0, 0.3] {
            let p = gev(0.0, 1.0, xi);
            let direct = gev_pdf(y1, &p).ln() + gev_pdf(y2, &p).ln() - gev_cdf(y1, &p).ln();
            assert!((gevr_log_density(&[y1, y2], &p) - direct).abs() < 1e-10);
            // the conditional density integrates to one below y1
            let lo = gev_quantile(1e-12, &p).unwrap();
            let mass = integrate(|y| gev_pdf(y, &p) / gev_cdf(y1, &p), lo, y1, 400);
            assert!((mass - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn second_order_margin_matches_poisson_form() {
    // P(Y2 <= y) = G(y) (1 + Lambda(y)), Lambda = -log G
    let p = gev(0.0, 1.0, 0.25);
    let s = sample_gevr(10_000, 2, &p, &mut rng_from_seed(11)).unwrap();
    let y2 = s.column(1);
    let d = ks_distance(&y2, |y| {
        let g = gev_cdf(y, &p);
        g * (1.0 - g.ln())
    });
    assert!(d < ks_critical_01(y2.len()), "KS {d}");
}

#[test]
fn ks_oracles_for_samplers() {
    let p = gev(0.0, 1.0, 0.25);
    let y = sample_gev(10_000, &p, &mut rng_from_seed(1));
    assert!(ks_distance(&y, |v| gev_cdf(v, &p)) < ks_critical_01(10_000));
    let r1 = sample_gevr(10_000, 1, &p, &mut rng_from_seed(2)).unwrap().column(0);
    assert!(ks_distance(&r1, |v| gev_cdf(v, &p)) < ks_critical_01(10_000));
    let c1 = sample_gevr(10_000, 5, &p, &mut rng_from_seed(3)).unwrap().column(0);
    assert!(ks_distance(&c1, |v| gev_cdf(v, &p)) < ks_critical_01(10_000));
    let g = GpdParams::new(1.0, 0.0).unwrap();
    let e = sample_gpd(10_000, &g, &mut rng_from_seed(4));
    let m = e.iter().sum::<f64>() / e.len() as f64;
    assert!((m - 1.0).abs() < 3.0 / 100.0);
}

#[test]
fn kumgev_closed_form() {
    let base = gev(0.0, 1.0, 0.1);
    let k = KumGevParams::new(base, 2.0, 2.0).unwrap();
    for y in [-1.0, 0.0, 0.7, 2.0] {
        let g = gev_cdf(y, &base);
        assert!((kumgev_cdf(y, &k) - (1.0 - (1.0 - g * g).powi(2))).abs() < 1e-12);
    }
    let mut rng = rng_from_seed(5);
    let draws: Vec<f64> = (0..10_000).map(|_| kumgev_truncated_draw(&k, 1e300, &mut rng).unwrap()).collect();
    let d = ks_distance(&draws, |y| {
        let g = gev_cdf(y, &base);
        1.0 - (1.0 - g * g).powi(2)
    });
    assert!(d < ks_critical_01(draws.len()), "KS {d}");
}

#[test]
fn threshold_stability() {
    let (sigma, xi, v) = (1.0, 0.25, 1.0);
    let y = sample_gpd(40_000, &GpdParams::new(sigma, xi).unwrap(), &mut rng_from_seed(6));
    let above: Vec<f64> = y.iter().filter(|&&x| x > v).map(|x| x - v).collect();
    let fresh = sample_gpd(above.len(), &GpdParams::new(sigma + xi * v, xi).unwrap(), &mut rng_from_seed(7));
    let d = ks_two_sample(&above, &fresh);
    assert!(d < ks_two_sample_critical_01(above.len(), fresh.len()), "KS {d}");
}

#[test]
fn frechet_transform_is_unit_frechet() {
    let p = gev(3.0, 1.5, -0.1);
    let y = sample_gev(10_000, &p, &mut rng_from_seed(8));
    let z: Vec<f64> = y.iter().map(|&v| frechet_transform(v, &p).unwrap()).collect();
    assert!(ks_distance(&z, |v| (-1.0 / v).exp()) < ks_critical_01(z.len()));
}

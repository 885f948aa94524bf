//! Derivative-free minimization, one-dimensional root finding, and finite
//! difference derivatives.

/// Settings for [`nelder_mead`].
#[derive(Debug, Clone)]
pub struct NelderMead {
    pub max_evals: usize,
    /// Convergence when the spread of simplex values is below
    /// `ftol * (1 + |f_best|)`.
    pub ftol: f64,
    /// Convergence also requires every vertex within `xtol` of the best one.
    pub xtol: f64,
    /// Fresh simplices built around the best point after convergence.
    pub restarts: usize,
}

impl Default for NelderMead {
    fn default() -> Self {
        Self { max_evals: 4000, ftol: 1e-10, xtol: 1e-7, restarts: 2 }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Minimize `f` from `x0` with initial simplex offsets `steps`.
///
/// Non-finite objective values are treated as `+inf`, so support violations
/// act as a barrier. Adaptive coefficients (Gao and Han) are used so the
/// search does not stall in higher dimensions.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], steps: &[f64], opts: &NelderMead) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let dim = x0.len();
    assert_eq!(steps.len(), dim);
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let nd = dim as f64;
    let (alpha, gamma, rho, shrink) = if dim > 2 {
        (1.0, 1.0 + 2.0 / nd, 0.75 - 0.5 / nd, 1.0 - 1.0 / nd)
    } else {
        (1.0, 2.0, 0.5, 0.5)
    };

    let mut best_x = x0.to_vec();
    let mut best_f = eval(x0, &mut evals);
    let mut converged = false;

    for round in 0..=opts.restarts {
        let start = best_x.clone();
        let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
        let mut fvals: Vec<f64> = Vec::with_capacity(dim + 1);
        simplex.push(start.clone());
        fvals.push(best_f);
        for i in 0..dim {
            let mut v = start.clone();
            let s = if round == 0 { steps[i] } else { steps[i] * 0.5f64.powi(round as i32) };
            v[i] += if s != 0.0 { s } else { 1e-3 };
            fvals.push(eval(&v, &mut evals));
            simplex.push(v);
        }
        let round_start = best_f;
        let mut round_converged = false;
        let mut order: Vec<usize> = (0..=dim).collect();
        let mut centroid = vec![0.0; dim];
        let mut xr = vec![0.0; dim];
        let mut xe = vec![0.0; dim];
        let mut xc = vec![0.0; dim];

        while evals < opts.max_evals {
            order.sort_by(|&a, &b| fvals[a].total_cmp(&fvals[b]));
            let (ib, iw, isw) = (order[0], order[dim], order[dim - 1]);
            let fb = fvals[ib];
            let fw = fvals[iw];
            if fb.is_finite() && fw.is_finite() {
                let fspread = fw - fb;
                let xspread = simplex
                    .iter()
                    .map(|v| v.iter().zip(&simplex[ib]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                    .fold(0.0, f64::max);
                if fspread <= opts.ftol * (1.0 + fb.abs()) && xspread <= opts.xtol * (1.0 + max_abs(&simplex[ib])) {
                    round_converged = true;
                    break;
                }
            }
            centroid.iter_mut().for_each(|c| *c = 0.0);
            for &k in &order[..dim] {
                for (c, v) in centroid.iter_mut().zip(&simplex[k]) {
                    *c += v / nd;
                }
            }
            for j in 0..dim {
                xr[j] = centroid[j] + alpha * (centroid[j] - simplex[iw][j]);
            }
            let fr = eval(&xr, &mut evals);
            if fr < fb {
                for j in 0..dim {
                    xe[j] = centroid[j] + gamma * (xr[j] - centroid[j]);
                }
                let fe = eval(&xe, &mut evals);
                if fe < fr {
                    simplex[iw].copy_from_slice(&xe);
                    fvals[iw] = fe;
                } else {
                    simplex[iw].copy_from_slice(&xr);
                    fvals[iw] = fr;
                }
                continue;
            }
            if fr < fvals[isw] {
                simplex[iw].copy_from_slice(&xr);
                fvals[iw] = fr;
                continue;
            }
            // contraction, outside or inside
            let outside = fr < fw;
            for j in 0..dim {
                xc[j] = if outside {
                    centroid[j] + rho * (xr[j] - centroid[j])
                } else {
                    centroid[j] + rho * (simplex[iw][j] - centroid[j])
                };
            }
            let fc = eval(&xc, &mut evals);
            if (outside && fc <= fr) || (!outside && fc < fw) {
                simplex[iw].copy_from_slice(&xc);
                fvals[iw] = fc;
                continue;
            }
            let xb = simplex[ib].clone();
            for k in 0..=dim {
                if k == ib {
                    continue;
                }
                for j in 0..dim {
                    simplex[k][j] = xb[j] + shrink * (simplex[k][j] - xb[j]);
                }
                fvals[k] = eval(&simplex[k], &mut evals);
            }
        }

        let ib = (0..=dim).min_by(|&a, &b| fvals[a].total_cmp(&fvals[b])).unwrap();
        if fvals[ib] <= best_f {
            best_f = fvals[ib];
            best_x = simplex[ib].clone();
        }
        if !round_converged {
            converged = false;
            break;
        }
        converged = best_f.is_finite();
        if round > 0 && (round_start - best_f).abs() <= opts.ftol * (1.0 + best_f.abs()) {
            break;
        }
    }

    Minimum { x: best_x, f: best_f, evals, converged }
}

fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Brent's method for a minimum of `f` on `[a, b]`.
pub fn brent_minimize<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64, max_iter: usize) -> (f64, f64) {
    const CGOLD: f64 = 0.381_966_011_250_105_1;
    let mut x = a + CGOLD * (b - a);
    let mut w = x;
    let mut v = x;
    let mut fx = f(x);
    let mut fw = fx;
    let mut fv = fx;
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    for _ in 0..max_iter {
        let xm = 0.5 * (a + b);
        let tol1 = tol * x.abs() + 1e-12;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if p.abs() < (0.5 * q * etemp).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = CGOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = f(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, fx)
}

/// Bisection for a sign change of `f` on `[lo, hi]`.
pub fn bisect<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64, tol: f64, max_iter: usize) -> Option<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if !(flo.is_finite() && fhi.is_finite()) || flo.signum() == fhi.signum() {
        if flo == 0.0 {
            return Some(lo);
        }
        if fhi == 0.0 {
            return Some(hi);
        }
        return None;
    }
    for _ in 0..max_iter {
        let mid = 0.5 * (lo + hi);
        if (hi - lo).abs() <= tol {
            return Some(mid);
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Some(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

fn fd_step(x: f64) -> f64 {
    1e-4 * x.abs().max(1.0)
}

/// Central-difference gradient.
pub fn gradient<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64]) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = fd_step(x[i]) * 0.1;
            xp[i] = x[i] + h;
            let fp = f(&xp);
            xp[i] = x[i] - h;
            let fm = f(&xp);
            xp[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Central-difference Hessian, symmetrized.
pub fn hessian<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64]) -> nalgebra::DMatrix<f64> {
    let d = x.len();
    let h: Vec<f64> = x.iter().map(|&v| fd_step(v)).collect();
    let f0 = f(x);
    let mut xp = x.to_vec();
    let mut m = nalgebra::DMatrix::zeros(d, d);
    for i in 0..d {
        xp[i] = x[i] + h[i];
        let fp = f(&xp);
        xp[i] = x[i] - h[i];
        let fm = f(&xp);
        xp[i] = x[i];
        m[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
    }
    for i in 0..d {
        for j in (i + 1)..d {
            let mut s = 0.0;
            for (si, sj, sign) in [(1.0, 1.0, 1.0), (1.0, -1.0, -1.0), (-1.0, 1.0, -1.0), (-1.0, -1.0, 1.0)] {
                xp[i] = x[i] + si * h[i];
                xp[j] = x[j] + sj * h[j];
                s += sign * f(&xp);
            }
            xp[i] = x[i];
            xp[j] = x[j];
            let v = s / (4.0 * h[i] * h[j]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = nelder_mead(f, &[-1.2, 1.0], &[0.5, 0.5], &NelderMead { max_evals: 10_000, ..Default::default() });
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn quadratic_high_dim() {
        let f = |x: &[f64]| x.iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * (v - 1.0).powi(2)).sum::<f64>();
        let x0 = vec![0.0; 8];
        let m = nelder_mead(f, &x0, &[0.5; 8], &NelderMead { max_evals: 40_000, ..Default::default() });
        assert!(m.x.iter().all(|v| (v - 1.0).abs() < 1e-3), "{:?}", m.x);
    }

    #[test]
    fn barrier_respected() {
        let f = |x: &[f64]| if x[0] < 0.0 { f64::NAN } else { (x[0] - 0.0).powi(2) + x[0] };
        let m = nelder_mead(f, &[1.0], &[0.3], &NelderMead::default());
        assert!(m.x[0] >= 0.0 && m.x[0] < 1e-5);
    }

    #[test]
    fn brent_and_bisect() {
        let (x, _) = brent_minimize(|x| (x - 2.0).powi(2) + 1.0, 0.0, 5.0, 1e-10, 200);
        assert!((x - 2.0).abs() < 1e-6);
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-14, 200).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-12);
        assert!(bisect(|x| x * x + 1.0, 0.0, 2.0, 1e-12, 100).is_none());
    }

    #[test]
    fn quadrature_is_exact_for_polynomials() {
        let (x, w) = gauss_legendre(8);
        let total: f64 = w.iter().sum();
        assert!((total - 2.0).abs() < 1e-14);
        let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert!((q - 2.0 / 15.0).abs() < 1e-14);
    }

    #[test]
    fn finite_differences() {
        let f = |x: &[f64]| x[0] * x[0] * x[1] + x[1].exp();
        let g = gradient(f, &[1.0, 0.5]);
        assert!((g[0] - 1.0).abs() < 1e-7 && (g[1] - (1.0 + 0.5f64.exp())).abs() < 1e-7);
        let h = hessian(f, &[1.0, 0.5]);
        assert!((h[(0, 0)] - 1.0).abs() < 1e-5);
        assert!((h[(0, 1)] - 2.0).abs() < 1e-5);
        assert!((h[(1, 1)] - 0.5f64.exp()).abs() < 1e-5);
    }
}

use nalgebra::{DMatrix, DVector};

/// A design matrix with its non-intercept columns centered and scaled.
///
/// The first `n_intercepts` columns are left untouched; fits are run on the
/// scaled columns and mapped back with [`ScaledDesign::unscale`].
#[derive(Debug, Clone)]
pub struct ScaledDesign {
    pub scaled: DMatrix<f64>,
    n_intercepts: usize,
    means: Vec<f64>,
    sds: Vec<f64>,
}

impl ScaledDesign {
    pub fn new(x: &DMatrix<f64>, n_intercepts: usize) -> Self {
        let mut scaled = x.clone();
        let rows = x.nrows() as f64;
        let mut means = vec![0.0; x.ncols()];
        let mut sds = vec![1.0; x.ncols()];
        for j in n_intercepts..x.ncols() {
            let col = x.column(j);
            let m = col.sum() / rows;
            let v = col.iter().map(|c| (c - m).powi(2)).sum::<f64>() / rows;
            let s = v.sqrt();
            let s = if s > 0.0 { s } else { 1.0 };
            means[j] = m;
            sds[j] = s;
            for i in 0..x.nrows() {
                scaled[(i, j)] = (x[(i, j)] - m) / s;
            }
        }
        Self { scaled, n_intercepts, means, sds }
    }

    pub fn ncols(&self) -> usize {
        self.scaled.ncols()
    }

    /// Map coefficients on the scaled design back to the original columns.
    ///
    /// With a single intercept the shift is absorbed by it; with several
    /// (one indicator per group) each one absorbs it.
    pub fn unscale(&self, beta: &[f64]) -> Vec<f64> {
        let mut out = beta.to_vec();
        let mut shift = 0.0;
        for j in self.n_intercepts..beta.len() {
            out[j] = beta[j] / self.sds[j];
            shift += out[j] * self.means[j];
        }
        for b in out.iter_mut().take(self.n_intercepts) {
            *b -= shift;
        }
        out
    }

    /// Inverse of [`ScaledDesign::unscale`].
    pub fn scale(&self, beta: &[f64]) -> Vec<f64> {
        let mut out = beta.to_vec();
        let mut shift = 0.0;
        for j in self.n_intercepts..beta.len() {
            shift += beta[j] * self.means[j];
            out[j] = beta[j] * self.sds[j];
        }
        for b in out.iter_mut().take(self.n_intercepts) {
            *b += shift;
        }
        out
    }

    /// Jacobian of `unscale`, for mapping covariances.
    pub fn unscale_jacobian(&self) -> DMatrix<f64> {
        let p = self.ncols();
        let mut j = DMatrix::identity(p, p);
        for k in self.n_intercepts..p {
            j[(k, k)] = 1.0 / self.sds[k];
            for i in 0..self.n_intercepts {
                j[(i, k)] = -self.means[k] / self.sds[k];
            }
        }
        j
    }

    pub fn linear(&self, beta: &[f64]) -> DVector<f64> {
        &self.scaled * DVector::from_column_slice(beta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unscale_round_trip_and_prediction() {
        let x = DMatrix::from_row_slice(4, 3, &[1.0, 2.0, 10.0, 1.0, 4.0, 11.0, 1.0, 5.0, 15.0, 1.0, 9.0, 12.0]);
        let d = ScaledDesign::new(&x, 1);
        let b = vec![0.3, -0.2, 0.7];
        let orig = d.unscale(&b);
        let pred_scaled = d.linear(&b);
        let pred_orig = &x * DVector::from_vec(orig.clone());
        for i in 0..4 {
            assert!((pred_scaled[i] - pred_orig[i]).abs() < 1e-12);
        }
        let back = d.scale(&orig);
        for (a, c) in back.iter().zip(&b) {
            assert!((a - c).abs() < 1e-12);
        }
    }
}

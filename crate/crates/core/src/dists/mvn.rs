use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Largest ridge tried before a covariance is declared singular.
pub const MAX_RIDGE: f64 = 1e-4;

/// Multivariate normal with a cached Cholesky factor.
#[derive(Debug, Clone)]
pub struct MvnDensity {
    mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    log_norm: f64,
    /// Ridge that was added to the diagonal (0 when none was needed).
    pub ridge: f64,
}

impl MvnDensity {
    /// Factorizes `cov` as given; fails if it is not positive definite.
    pub fn new(mean: &[f64], cov: &DMatrix<f64>) -> Result<Self> {
        Self::build(mean, cov.clone(), 0.0, "covariance")
    }

    /// Factorizes `cov`, adding `ridge * I` (escalating x10 up to
    /// [`MAX_RIDGE`]) when the plain factorization fails.
    pub fn with_ridge(mean: &[f64], cov: &DMatrix<f64>, ridge: f64, component: &str) -> Result<Self> {
        if let Ok(d) = Self::build(mean, cov.clone(), 0.0, component) {
            return Ok(d);
        }
        let mut r = ridge.max(f64::MIN_POSITIVE);
        loop {
            let shifted = cov + DMatrix::identity(cov.nrows(), cov.ncols()) * r;
            if let Ok(d) = Self::build(mean, shifted, r, component) {
                return Ok(d);
            }
            if r >= MAX_RIDGE {
                return Err(Error::NotPositiveDefinite {
                    component: component.to_string(),
                    ridge: r,
                });
            }
            r = (r * 10.0).min(MAX_RIDGE);
        }
    }

    fn build(mean: &[f64], cov: DMatrix<f64>, ridge: f64, component: &str) -> Result<Self> {
        let p = mean.len();
        if cov.nrows() != p || cov.ncols() != p {
            return Err(Error::LengthMismatch(p, cov.nrows()));
        }
        let not_pd = || Error::NotPositiveDefinite {
            component: component.to_string(),
            ridge,
        };
        if cov.iter().any(|v| !v.is_finite()) {
            return Err(not_pd());
        }
        let chol = Cholesky::new(cov).ok_or_else(not_pd)?;
        let l = chol.l_dirty();
        let mut log_det = 0.0;
        for i in 0..p {
            let d = l[(i, i)];
            if !(d > 0.0) || !d.is_finite() {
                return Err(not_pd());
            }
            log_det += 2.0 * d.ln();
        }
        Ok(Self {
            mean: DVector::from_column_slice(mean),
            chol,
            log_norm: -0.5 * (p as f64 * LN_2PI + log_det),
            ridge,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// The covariance actually factorized (including any ridge).
    pub fn covariance(&self) -> DMatrix<f64> {
        let l = self.chol.l();
        &l * l.transpose()
    }

    pub fn logpdf(&self, u: &[f64]) -> f64 {
        let p = self.mean.len();
        if p == 0 {
            return 0.0;
        }
        let l = self.chol.l_dirty();
        // Forward substitution L z = u - mu; quadratic form is |z|^2.
        let mut z = vec![0.0; p];
        let mut quad = 0.0;
        for i in 0..p {
            let mut s = u[i] - self.mean[i];
            for k in 0..i {
                s -= l[(i, k)] * z[k];
            }
            z[i] = s / l[(i, i)];
            quad += z[i] * z[i];
        }
        self.log_norm - 0.5 * quad
    }
}

/// `log phi(u | mu, sigma)`.
pub fn mvn_logpdf(u: &[f64], mu: &[f64], sigma: &DMatrix<f64>) -> Result<f64> {
    if u.len() != mu.len() {
        return Err(Error::LengthMismatch(u.len(), mu.len()));
    }
    Ok(MvnDensity::new(mu, sigma)?.logpdf(u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn at_mean_identity() {
        let v = mvn_logpdf(&[0.3, -1.0], &[0.3, -1.0], &DMatrix::identity(2, 2)).unwrap();
        assert!((v + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-14);
    }

    #[test]
    fn at_mean_cluster_one_covariance() {
        let sigma = DMatrix::from_row_slice(2, 2, &[0.7, 0.5, 0.5, 3.0]);
        let det = 0.7 * 3.0 - 0.25;
        assert!((det - 1.85f64).abs() < 1e-15);
        let v = mvn_logpdf(&[2.05, 0.13], &[2.05, 0.13], &sigma).unwrap();
        let expected = -0.5 * ((2.0 * std::f64::consts::PI).powi(2) * det).ln();
        assert!((v - expected).abs() < 1e-13);
    }

    #[test]
    fn rejects_indefinite() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            mvn_logpdf(&[0.0, 0.0], &[0.0, 0.0], &sigma),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn ridge_rescues_singular() {
        let sigma = DMatrix::zeros(2, 2);
        let d = MvnDensity::with_ridge(&[1.0, 1.0], &sigma, 1e-8, "cluster 1").unwrap();
        assert_eq!(d.ridge, 1e-8);
        let cov = d.covariance();
        assert!((cov[(0, 0)] - 1e-8).abs() < 1e-20);
        assert!(cov[(0, 1)].abs() < 1e-24);
    }

    fn closed_form_2x2(u: [f64; 2], mu: [f64; 2], s: [f64; 3]) -> f64 {
        let (a, b, c) = (s[0], s[1], s[2]);
        let det = a * c - b * b;
        let (d0, d1) = (u[0] - mu[0], u[1] - mu[1]);
        let quad = (c * d0 * d0 - 2.0 * b * d0 * d1 + a * d1 * d1) / det;
        -(2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln() - 0.5 * quad
    }

    proptest! {
        #[test]
        fn matches_explicit_inverse(
            u0 in -5.0..5.0f64, u1 in -5.0..5.0f64,
            m0 in -5.0..5.0f64, m1 in -5.0..5.0f64,
            a in 0.1..4.0f64, c in 0.1..4.0f64, rho in -0.95..0.95f64,
        ) {
            let b = rho * (a * c).sqrt();
            let sigma = DMatrix::from_row_slice(2, 2, &[a, b, b, c]);
            let got = mvn_logpdf(&[u0, u1], &[m0, m1], &sigma).unwrap();
            let want = closed_form_2x2([u0, u1], [m0, m1], [a, b, c]);
            prop_assert!((got - want).abs() < 1e-9 * (1.0 + want.abs()));
        }

        #[test]
        fn permutation_invariant(
            u in proptest::collection::vec(-3.0..3.0f64, 3),
            mu in proptest::collection::vec(-3.0..3.0f64, 3),
            raw in proptest::collection::vec(-1.0..1.0f64, 9),
        ) {
            let a = DMatrix::from_row_slice(3, 3, &raw);
            let sigma = &a * a.transpose() + DMatrix::identity(3, 3) * 0.5;
            let perm = [2usize, 0, 1];
            let up: Vec<f64> = perm.iter().map(|&i| u[i]).collect();
            let mp: Vec<f64> = perm.iter().map(|&i| mu[i]).collect();
            let sp = DMatrix::from_fn(3, 3, |i, j| sigma[(perm[i], perm[j])]);
            let x = mvn_logpdf(&u, &mu, &sigma).unwrap();
            let y = mvn_logpdf(&up, &mp, &sp).unwrap();
            prop_assert!((x - y).abs() < 1e-10);
        }
    }
}

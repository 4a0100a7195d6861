//! Log-space density kernels for the covariate blocks.

pub mod ising;
pub mod mvn;

pub use ising::{Domain, IsingFit, IsingModel, H_MAX};
pub use mvn::{mvn_logpdf, MvnDensity};

use crate::error::{Error, Result};

/// Log-probability of zero-based category `v` under `lambda`.
pub fn multinomial_logpmf(v: usize, lambda: &[f64]) -> Result<f64> {
    lambda
        .get(v)
        .map(|p| p.ln())
        .ok_or(Error::IndexOutOfRange {
            index: v,
            len: lambda.len(),
        })
}

/// Numerically stable `log(sum(exp(xs)))`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m.is_infinite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multinomial_values() {
        let lambda = [0.75, 0.18, 0.07];
        assert_eq!(multinomial_logpmf(0, &lambda).unwrap(), 0.75f64.ln());
        let total: f64 = (0..3).map(|v| multinomial_logpmf(v, &lambda).unwrap().exp()).sum();
        assert!((total - 1.0).abs() < 1e-15);
        assert!(multinomial_logpmf(3, &lambda).is_err());
    }

    #[test]
    fn multinomial_uniform() {
        let k = 5;
        let lambda = vec![1.0 / k as f64; k];
        for v in 0..k {
            let lp = multinomial_logpmf(v, &lambda).unwrap();
            assert!((lp + (k as f64).ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn lse() {
        assert!((log_sum_exp(&[0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-9);
    }
}

//! Parameter containers, estimation controls and the serialized fit.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::DataSchema;
use crate::dists::{Domain, IsingModel};
use crate::error::{Error, Result};
use crate::glmm::LogisticMixedFit;

/// Version written into every serialized fit. Loaders accept any minor
/// revision of the same major.
pub const SCHEMA_VERSION: &str = "1.0";

/// Joint model for the binary covariate block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DichotomousModel {
    Ising(IsingModel),
    /// Independent Bernoulli columns; `p[l]` is the probability of the high
    /// value of column `l`.
    Independent { p: Vec<f64>, domain: Domain },
}

impl DichotomousModel {
    pub fn h(&self) -> usize {
        match self {
            Self::Ising(m) => m.h(),
            Self::Independent { p, .. } => p.len(),
        }
    }

    pub fn logpmf(&self, d: &[i8]) -> Result<f64> {
        match self {
            Self::Ising(m) => m.logpmf(d),
            Self::Independent { p, domain } => {
                let mut s = 0.0;
                for (&v, &pl) in d.iter().zip(p) {
                    if v == domain.high() {
                        s += pl.ln();
                    } else if v == domain.low() {
                        s += (1.0 - pl).ln();
                    } else {
                        return Err(Error::DomainMismatch {
                            value: v,
                            domain: domain.label(),
                        });
                    }
                }
                Ok(s)
            }
        }
    }
}

/// One mixture component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub w: f64,
    pub regression: LogisticMixedFit,
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    /// Ridge added to `sigma`'s diagonal during estimation (already included).
    pub sigma_ridge: f64,
    pub lambda: Vec<Vec<f64>>,
    pub dichotomous: DichotomousModel,
}

impl ClusterParams {
    pub fn sigma_matrix(&self) -> DMatrix<f64> {
        let p = self.mu.len();
        DMatrix::from_fn(p, p, |i, j| self.sigma[i][j])
    }

    pub fn sigma_b(&self) -> f64 {
        self.regression.sigma_b
    }

    pub fn beta(&self) -> &[f64] {
        &self.regression.beta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    #[default]
    Random,
    Kmeans,
}

impl std::str::FromStr for InitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Self::Random),
            "kmeans" | "k-means" => Ok(Self::Kmeans),
            other => Err(Error::Config(format!("unknown init strategy `{other}`"))),
        }
    }
}

/// Which likelihood of the response enters the responsibilities and the
/// classification objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RegressionLikelihood {
    /// Group modes plugged in.
    #[default]
    PlugIn,
    /// Random intercept integrated out row by row.
    Marginal,
}

/// Full model or the variant with independent binary covariates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    Full,
    NoD,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub c_grid: Vec<usize>,
    pub n_starts: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
    pub init: InitStrategy,
    pub ising_domain: Domain,
    pub lambda_floor: f64,
    pub sigma_ridge: f64,
    /// Defaults to `max(5, m + 2)` when absent.
    pub min_cluster_size: Option<usize>,
    pub formula: Vec<String>,
    pub regression_likelihood: RegressionLikelihood,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            c_grid: vec![1, 2, 3, 4],
            n_starts: 10,
            max_iter: 100,
            tol: 1e-5,
            seed: 1,
            init: InitStrategy::Random,
            ising_domain: Domain::ZeroOne,
            lambda_floor: 1e-6,
            sigma_ridge: 1e-8,
            min_cluster_size: None,
            formula: Vec::new(),
            regression_likelihood: RegressionLikelihood::PlugIn,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be positive, got {}", self.tol)));
        }
        if self.c_grid.is_empty() || self.c_grid.contains(&0) {
            return Err(Error::Config("c_grid must be non-empty with every C >= 1".into()));
        }
        if self.n_starts == 0 {
            return Err(Error::Config("n_starts must be at least 1".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if self.min_cluster_size == Some(0) {
            return Err(Error::Config("min_cluster_size must be at least 1".into()));
        }
        if !(0.0..0.5).contains(&self.lambda_floor) {
            return Err(Error::Config("lambda_floor must lie in [0, 0.5)".into()));
        }
        if !(self.sigma_ridge > 0.0) {
            return Err(Error::Config("sigma_ridge must be positive".into()));
        }
        if self.formula.is_empty() {
            return Err(Error::Config("formula must name at least one term".into()));
        }
        Ok(())
    }

    pub fn min_cluster_size_for(&self, m: usize) -> usize {
        self.min_cluster_size.unwrap_or((m + 2).max(5))
    }
}

/// A fitted mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    pub schema_version: String,
    pub variant: Variant,
    pub c: usize,
    pub components: Vec<ClusterParams>,
    /// Responsibilities, one row per observation.
    pub tau: Vec<Vec<f64>>,
    /// Hard assignments (0-based cluster index).
    pub z: Vec<usize>,
    /// Observed-data mixture log-likelihood.
    pub loglik: f64,
    pub classification_loglik: f64,
    pub n_params: usize,
    pub bic: f64,
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub seed: u64,
    pub start: usize,
    pub design_names: Vec<String>,
    pub schema: DataSchema,
    pub config: FitConfig,
    /// Youden cutoff and accuracy on the training rows, when computed.
    pub train_cutoff: Option<f64>,
    pub train_accuracy: Option<f64>,
}

impl ModelFit {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(s)?;
        let version = value
            .get("schema_version")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::SchemaVersion("missing schema_version".into()))?;
        let major = |v: &str| v.split('.').next().unwrap_or("").to_string();
        if major(version) != major(SCHEMA_VERSION) {
            return Err(Error::SchemaVersion(format!(
                "fit has schema {version}, this build reads {SCHEMA_VERSION}"
            )));
        }
        Ok(serde_json::from_value(value)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// `k_reg + k_cont + k_cat + k_dich + k_weights`.
pub fn parameter_count(c: usize, m: usize, p: usize, k_r: &[usize], h: usize, variant: Variant) -> usize {
    let k_reg = c * (1 + m);
    let k_cont = c * p * (p + 3) / 2;
    let k_cat = c * k_r.iter().map(|k| k.saturating_sub(1)).sum::<usize>();
    let k_dich = match variant {
        Variant::Full => c * h * (h + 1) / 2,
        Variant::NoD => c * h,
    };
    k_reg + k_cont + k_cat + k_dich + (c - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_counts() {
        assert_eq!(parameter_count(3, 8, 2, &[3, 2], 3, Variant::Full), 71);
        assert_eq!(parameter_count(3, 8, 2, &[3, 2], 3, Variant::NoD), 62);
        assert_eq!(parameter_count(1, 1, 0, &[], 0, Variant::Full), 2);
    }

    #[test]
    fn config_validation() {
        let ok = FitConfig {
            formula: vec!["x".into()],
            ..Default::default()
        };
        assert!(ok.validate().is_ok());
        assert!(FitConfig { tol: 0.0, ..ok.clone() }.validate().is_err());
        assert!(FitConfig { c_grid: vec![0, 2], ..ok.clone() }.validate().is_err());
        assert!(FitConfig { min_cluster_size: Some(0), ..ok.clone() }.validate().is_err());
        assert_eq!(ok.min_cluster_size_for(8), 10);
        assert_eq!(ok.min_cluster_size_for(1), 5);
    }

    #[test]
    fn independent_block() {
        let d = DichotomousModel::Independent {
            p: vec![0.25, 0.5],
            domain: Domain::ZeroOne,
        };
        let v = d.logpmf(&[1, 0]).unwrap();
        assert!((v - (0.25f64.ln() + 0.5f64.ln())).abs() < 1e-15);
        assert!(d.logpmf(&[-1, 0]).is_err());
    }

    #[test]
    fn rejects_unknown_major() {
        let err = ModelFit::from_json(r#"{"schema_version": "2.0"}"#).unwrap_err();
        assert!(matches!(err, Error::SchemaVersion(_)));
    }
}

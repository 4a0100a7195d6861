//! The run configuration file and its merge with command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use mlcwm::data::{Role, RoleManifest};
use mlcwm::dists::Domain;
use mlcwm::model::{FitConfig, InitStrategy, RegressionLikelihood};
use serde::{Deserialize, Serialize};

/// Environment variable that overrides `output.dir` (a `--out` flag still wins).
pub const OUTPUT_ENV: &str = "MLCWM_OUTPUT_DIR";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub data: DataSection,
    pub model: ModelSection,
    #[serde(skip_serializing_if = "OutputSection::is_empty")]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Held-out rows used by `evaluate`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_path: Option<PathBuf>,
    /// Encoding of the dichotomous columns in the file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub domain: Option<Domain>,
    pub roles: BTreeMap<String, Role>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub levels: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_grid: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_starts: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init: Option<InitStrategy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ising_domain: Option<Domain>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub formula: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_floor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_cluster_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regression_likelihood: Option<RegressionLikelihood>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

impl OutputSection {
    fn is_empty(&self) -> bool {
        self.dir.is_none()
    }
}

impl ConfigFile {
    /// Parses a TOML file; relative data paths are taken relative to it.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: ConfigFile = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(q) = p.as_mut() {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        rebase(&mut cfg.data.path);
        rebase(&mut cfg.data.test_path);
        rebase(&mut cfg.output.dir);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }
}

pub fn parse_domain(s: &str) -> Result<Domain> {
    match s {
        "01" | "zero-one" => Ok(Domain::ZeroOne),
        "pm1" | "plus-minus-one" => Ok(Domain::PlusMinusOne),
        other => bail!("unknown domain `{other}` (expected 01 or pm1)"),
    }
}

/// Flags shared by `fit` and `select`; each overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct ModelFlags {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training CSV (overrides data.path).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Number(s) of clusters, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub c: Option<Vec<usize>>,
    #[arg(long)]
    pub starts: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// random or kmeans.
    #[arg(long)]
    pub init: Option<InitStrategy>,
    /// 01 or pm1.
    #[arg(long, value_parser = parse_domain)]
    pub ising_domain: Option<Domain>,
    /// Fixed-effect terms, comma separated (`1` adds an intercept).
    #[arg(long, value_delimiter = ',')]
    pub formula: Option<Vec<String>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Everything a fitting command needs once file and flags are merged.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub data: PathBuf,
    pub test: Option<PathBuf>,
    pub manifest: RoleManifest,
    pub fit: FitConfig,
    pub out: PathBuf,
}

pub fn output_dir(flag: Option<&Path>, file: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(OUTPUT_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(p);
    }
    file.map_or_else(|| PathBuf::from("mlcwm-out"), Path::to_path_buf)
}

impl ModelFlags {
    pub fn resolve(&self) -> Result<Resolved> {
        let file = match &self.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        let m = &file.model;
        let defaults = FitConfig::default();
        let fit = FitConfig {
            c_grid: self.c.clone().or_else(|| m.c_grid.clone()).unwrap_or(defaults.c_grid),
            n_starts: self.starts.or(m.n_starts).unwrap_or(defaults.n_starts),
            max_iter: self.max_iter.or(m.max_iter).unwrap_or(defaults.max_iter),
            tol: self.tol.or(m.tol).unwrap_or(defaults.tol),
            seed: self.seed.or(file.seed).unwrap_or(defaults.seed),
            init: self.init.or(m.init).unwrap_or(defaults.init),
            ising_domain: self.ising_domain.or(m.ising_domain).unwrap_or(defaults.ising_domain),
            lambda_floor: m.lambda_floor.unwrap_or(defaults.lambda_floor),
            min_cluster_size: m.min_cluster_size,
            formula: self.formula.clone().or_else(|| m.formula.clone()).unwrap_or_default(),
            regression_likelihood: m.regression_likelihood.unwrap_or_default(),
            ..defaults
        };
        fit.validate()?;
        let data = self
            .data
            .clone()
            .or_else(|| file.data.path.clone())
            .context("no training data: pass --data or set data.path")?;
        if file.data.roles.is_empty() {
            bail!("the config must list column roles under [data.roles]");
        }
        let manifest = RoleManifest {
            roles: file.data.roles.clone(),
            levels: file.data.levels.clone(),
            domain: file.data.domain.unwrap_or(fit.ising_domain),
        };
        Ok(Resolved {
            data,
            test: file.data.test_path.clone(),
            manifest,
            fit,
            out: output_dir(self.out.as_deref(), file.output.dir.as_deref()),
        })
    }
}

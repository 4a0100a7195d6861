//! Classification EM with multi-start and BIC selection.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{build_design, Dataset};
use crate::dists::{self, ising, Domain, MvnDensity};
use crate::error::{Error, Result};
use crate::glmm::{self, LogisticMixedFit, MixedOptions};
use crate::model::{
    parameter_count, ClusterParams, DichotomousModel, FitConfig, ModelFit, RegressionLikelihood,
    Variant, SCHEMA_VERSION,
};

/// Dataset blocks in the form the estimator consumes.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub x: DMatrix<f64>,
    pub design_names: Vec<String>,
    pub y: Vec<u8>,
    pub groups: Vec<usize>,
    pub n_groups: usize,
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<usize>>,
    pub k_r: Vec<usize>,
    /// Binary rows mapped into `domain`.
    pub d: Vec<Vec<i8>>,
    pub domain: Domain,
}

fn map_domain(v: i8, from: Domain, to: Domain) -> i8 {
    if from == to {
        v
    } else if v == from.high() {
        to.high()
    } else {
        to.low()
    }
}

impl Prepared {
    pub fn new(ds: &Dataset, formula: &[String], domain: Domain) -> Result<Self> {
        let design = build_design(ds, formula)?;
        let n = ds.n_obs();
        Ok(Self {
            x: design.x,
            design_names: design.names,
            y: ds.y.clone(),
            groups: ds.groups.clone(),
            n_groups: ds.n_groups(),
            u: (0..n).map(|i| ds.continuous_row(i)).collect(),
            v: (0..n).map(|i| ds.categorical_row(i)).collect(),
            k_r: ds.category_counts(),
            d: (0..n)
                .map(|i| {
                    ds.binary_row(i)
                        .into_iter()
                        .map(|b| map_domain(b, ds.domain, domain))
                        .collect()
                })
                .collect(),
            domain,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn m(&self) -> usize {
        self.x.ncols()
    }

    pub fn p(&self) -> usize {
        self.u.first().map_or(0, |r| r.len())
    }

    pub fn h(&self) -> usize {
        self.d.first().map_or(0, |r| r.len())
    }
}

/// Weighted mean and (maximum-likelihood) scatter matrix.
pub fn weighted_mean_cov(rows: &[Vec<f64>], weights: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let p = rows.first().map_or(0, |r| r.len());
    let total: f64 = weights.iter().sum();
    let mut mu = vec![0.0; p];
    for (r, &w) in rows.iter().zip(weights) {
        for a in 0..p {
            mu[a] += w * r[a];
        }
    }
    mu.iter_mut().for_each(|m| *m /= total);
    let mut s = DMatrix::zeros(p, p);
    for (r, &w) in rows.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        for a in 0..p {
            for b in 0..=a {
                s[(a, b)] += w * (r[a] - mu[a]) * (r[b] - mu[b]);
            }
        }
    }
    for a in 0..p {
        for b in 0..=a {
            let v = s[(a, b)] / total;
            s[(a, b)] = v;
            s[(b, a)] = v;
        }
    }
    (mu, s)
}

/// Weighted category frequencies, floored at `floor` and renormalized.
pub fn category_frequencies(codes: &[usize], k: usize, weights: &[f64], floor: f64) -> Vec<f64> {
    let mut f = vec![0.0; k];
    for (&c, &w) in codes.iter().zip(weights) {
        f[c] += w;
    }
    let total: f64 = f.iter().sum();
    f.iter_mut().for_each(|v| *v = (*v / total).max(floor));
    let total: f64 = f.iter().sum();
    f.iter_mut().for_each(|v| *v /= total);
    f
}

/// Cluster shares of a hard assignment.
pub fn mixing_weights(z: &[usize], c: usize) -> Vec<f64> {
    let mut w = vec![0.0; c];
    z.iter().for_each(|&k| w[k] += 1.0);
    let n = z.len() as f64;
    w.iter_mut().for_each(|v| *v /= n);
    w
}

/// Per-row log densities of the covariate blocks plus `log w_c` (N x C).
pub fn covariate_log_densities(prep: &Prepared, comps: &[ClusterParams]) -> Result<Vec<Vec<f64>>> {
    let n = prep.n();
    let mut out = vec![vec![0.0; comps.len()]; n];
    for (c, comp) in comps.iter().enumerate() {
        let mvn = if prep.p() > 0 {
            Some(MvnDensity::with_ridge(
                &comp.mu,
                &comp.sigma_matrix(),
                1e-8,
                &format!("cluster {}", c + 1),
            )?)
        } else {
            None
        };
        // Binary rows take few distinct values; cache their log-pmf.
        let mut cache: std::collections::HashMap<&[i8], f64> = std::collections::HashMap::new();
        let lw = comp.w.ln();
        for i in 0..n {
            let mut s = lw;
            if let Some(m) = &mvn {
                s += m.logpdf(&prep.u[i]);
            }
            for (r, &code) in prep.v[i].iter().enumerate() {
                s += dists::multinomial_logpmf(code, &comp.lambda[r])?;
            }
            if prep.h() > 0 {
                let key = prep.d[i].as_slice();
                let ld = match cache.get(key) {
                    Some(&v) => v,
                    None => {
                        let v = comp.dichotomous.logpmf(key)?;
                        cache.insert(key, v);
                        v
                    }
                };
                s += ld;
            }
            out[i][c] = s;
        }
    }
    Ok(out)
}

fn regression_rows(prep: &Prepared, fit: &LogisticMixedFit, lik: RegressionLikelihood) -> Vec<f64> {
    match lik {
        RegressionLikelihood::PlugIn => glmm::conditional_loglik(fit, &prep.x, &prep.groups, &prep.y),
        RegressionLikelihood::Marginal => glmm::marginal_row_loglik(fit, &prep.x, &prep.y),
    }
}

/// Per-row joint log densities `log w_c + log p(y|x) + log f(u,v,d)`.
pub fn joint_log_densities(
    prep: &Prepared,
    comps: &[ClusterParams],
    lik: RegressionLikelihood,
) -> Result<Vec<Vec<f64>>> {
    let mut out = covariate_log_densities(prep, comps)?;
    for (c, comp) in comps.iter().enumerate() {
        for (i, v) in regression_rows(prep, &comp.regression, lik).into_iter().enumerate() {
            out[i][c] += v;
        }
    }
    Ok(out)
}

/// Responsibilities from log densities; also returns the observed-data
/// log-likelihood.
pub fn responsibilities(logdens: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, f64)> {
    let mut total = 0.0;
    let mut tau = Vec::with_capacity(logdens.len());
    for (i, row) in logdens.iter().enumerate() {
        let lse = dists::log_sum_exp(row);
        if !lse.is_finite() {
            return Err(Error::DegenerateRow(i + 1));
        }
        total += lse;
        let mut t: Vec<f64> = row.iter().map(|v| (v - lse).exp()).collect();
        let s: f64 = t.iter().sum();
        t.iter_mut().for_each(|v| *v /= s);
        tau.push(t);
    }
    Ok((tau, total))
}

/// E-step: responsibilities under `comps`.
pub fn e_step(prep: &Prepared, comps: &[ClusterParams], lik: RegressionLikelihood) -> Result<Vec<Vec<f64>>> {
    Ok(responsibilities(&joint_log_densities(prep, comps, lik)?)?.0)
}

/// Row-wise argmax; ties go to the lowest index.
pub fn hard_assign(tau: &[Vec<f64>]) -> Vec<usize> {
    tau.iter()
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Classification log-likelihood for assignment `z`.
pub fn classification_loglik(logdens: &[Vec<f64>], z: &[usize]) -> f64 {
    logdens.iter().zip(z).map(|(row, &k)| row[k]).sum()
}

/// Options shared by every M-step of one run.
#[derive(Debug, Clone)]
pub struct MStepOptions {
    pub variant: Variant,
    pub lambda_floor: f64,
    pub sigma_ridge: f64,
    pub min_cluster_size: usize,
    pub likelihood: RegressionLikelihood,
}

impl MStepOptions {
    pub fn from_config(cfg: &FitConfig, m: usize, variant: Variant) -> Self {
        Self {
            variant,
            lambda_floor: cfg.lambda_floor,
            sigma_ridge: cfg.sigma_ridge,
            min_cluster_size: cfg.min_cluster_size_for(m),
            likelihood: cfg.regression_likelihood,
        }
    }
}

fn fit_dichotomous(
    prep: &Prepared,
    idx: &[usize],
    opts: &MStepOptions,
    prev: Option<&DichotomousModel>,
) -> Result<DichotomousModel> {
    let h = prep.h();
    match opts.variant {
        Variant::Full => {
            let rows: Vec<&[i8]> = idx.iter().map(|&i| prep.d[i].as_slice()).collect();
            let init = match prev {
                Some(DichotomousModel::Ising(m)) => Some(m),
                _ => None,
            };
            let fit = ising::fit_pseudo(&rows, &vec![1.0; rows.len()], h, prep.domain, init)?;
            Ok(DichotomousModel::Ising(fit.model))
        }
        Variant::NoD => {
            let n = idx.len() as f64;
            let p = (0..h)
                .map(|l| {
                    let hi = idx.iter().filter(|&&i| prep.d[i][l] == prep.domain.high()).count() as f64;
                    (hi / n).clamp(opts.lambda_floor, 1.0 - opts.lambda_floor)
                })
                .collect();
            Ok(DichotomousModel::Independent { p, domain: prep.domain })
        }
    }
}

fn fit_cluster(
    prep: &Prepared,
    idx: &[usize],
    w: f64,
    cluster: usize,
    opts: &MStepOptions,
    prev: Option<&ClusterParams>,
) -> Result<ClusterParams> {
    let ones = vec![1.0; idx.len()];
    let urows: Vec<Vec<f64>> = idx.iter().map(|&i| prep.u[i].clone()).collect();
    let (mu, scatter) = weighted_mean_cov(&urows, &ones);
    let (sigma, sigma_ridge) = if prep.p() > 0 {
        let dens = MvnDensity::with_ridge(&mu, &scatter, opts.sigma_ridge, &format!("cluster {}", cluster + 1))?;
        let p = prep.p();
        let s = &scatter + DMatrix::identity(p, p) * dens.ridge;
        ((0..p).map(|a| (0..p).map(|b| s[(a, b)]).collect()).collect(), dens.ridge)
    } else {
        (Vec::new(), 0.0)
    };
    let lambda = (0..prep.k_r.len())
        .map(|r| {
            let codes: Vec<usize> = idx.iter().map(|&i| prep.v[i][r]).collect();
            category_frequencies(&codes, prep.k_r[r], &ones, opts.lambda_floor)
        })
        .collect();
    let dichotomous = fit_dichotomous(prep, idx, opts, prev.map(|p| &p.dichotomous))?;

    let mut weights = vec![0.0; prep.n()];
    idx.iter().for_each(|&i| weights[i] = 1.0);
    let mixed_opts = MixedOptions {
        init: prev.map(|p| (p.regression.beta.clone(), p.regression.sigma_b.max(1e-2))),
        init_modes: prev.map(|p| p.regression.b.clone()),
        standard_errors: false,
        ..Default::default()
    };
    let regression = glmm::fit_logistic_mixed(&prep.x, &prep.groups, prep.n_groups, &prep.y, &weights, &mixed_opts)?;
    Ok(ClusterParams {
        w,
        regression,
        mu,
        sigma,
        sigma_ridge,
        lambda,
        dichotomous,
    })
}

fn members(z: &[usize], c: usize) -> Vec<Vec<usize>> {
    let mut idx = vec![Vec::new(); c];
    for (i, &k) in z.iter().enumerate() {
        idx[k].push(i);
    }
    idx
}

/// Previous parameters and the assignment they were estimated on.
pub struct Previous<'a> {
    pub comps: &'a [ClusterParams],
    pub z: &'a [usize],
}

/// M-step for hard assignment `z`. With `prev`, clusters whose membership is
/// unchanged are kept, and for the others the regression and binary blocks
/// are only replaced when they raise that cluster's share of the
/// classification objective (the closed-form blocks are exact maximizers).
pub fn m_step(
    prep: &Prepared,
    z: &[usize],
    c: usize,
    opts: &MStepOptions,
    prev: Option<Previous<'_>>,
) -> Result<Vec<ClusterParams>> {
    let idx = members(z, c);
    for (k, rows) in idx.iter().enumerate() {
        if rows.len() < opts.min_cluster_size {
            return Err(Error::RestartRequired {
                cluster: k + 1,
                size: rows.len(),
                min: opts.min_cluster_size,
            });
        }
    }
    let w = mixing_weights(z, c);
    let prev_idx = prev.as_ref().map(|p| members(p.z, c));
    let mut out = Vec::with_capacity(c);
    for k in 0..c {
        let old = prev.as_ref().map(|p| &p.comps[k]);
        if let (Some(old), Some(pi)) = (old, &prev_idx) {
            if pi[k] == idx[k] {
                out.push(old.clone());
                continue;
            }
        }
        let mut new = fit_cluster(prep, &idx[k], w[k], k, opts, old)?;
        if let Some(old) = old {
            let reg_sum = |f: &LogisticMixedFit| -> f64 {
                let r = regression_rows(prep, f, opts.likelihood);
                idx[k].iter().map(|&i| r[i]).sum()
            };
            if reg_sum(&old.regression) > reg_sum(&new.regression) {
                new.regression = old.regression.clone();
            }
            let dich_sum = |d: &DichotomousModel| -> Result<f64> {
                idx[k].iter().map(|&i| d.logpmf(&prep.d[i])).sum()
            };
            if prep.h() > 0 && dich_sum(&old.dichotomous)? > dich_sum(&new.dichotomous)? {
                new.dichotomous = old.dichotomous.clone();
            }
        }
        out.push(new);
    }
    Ok(out)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of start `start` for `c` clusters under base seed `seed`.
pub fn start_seed(seed: u64, c: usize, start: usize) -> u64 {
    splitmix64(seed ^ splitmix64(((c as u64) << 32) | start as u64))
}

fn random_labels<R: Rng>(n: usize, c: usize, min: usize, rng: &mut R) -> Result<Vec<usize>> {
    let mut sizes = vec![0; c];
    for _ in 0..100 {
        let z: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        sizes.iter_mut().for_each(|s| *s = 0);
        z.iter().for_each(|&k| sizes[k] += 1);
        if sizes.iter().all(|&s| s >= min) {
            return Ok(z);
        }
    }
    let (k, &size) = sizes.iter().enumerate().min_by_key(|(_, s)| **s).expect("c >= 1");
    Err(Error::RestartRequired { cluster: k + 1, size, min })
}

/// k-means (k-means++ seeding, Lloyd iterations) on standardized rows.
pub fn kmeans_labels<R: Rng>(rows: &[Vec<f64>], c: usize, rng: &mut R) -> Vec<usize> {
    let n = rows.len();
    let p = rows.first().map_or(0, |r| r.len());
    if p == 0 || c == 1 {
        return (0..n).map(|_| if c == 1 { 0 } else { rng.random_range(0..c) }).collect();
    }
    let (mu, cov) = weighted_mean_cov(rows, &vec![1.0; n]);
    let sd: Vec<f64> = (0..p).map(|a| cov[(a, a)].sqrt().max(1e-12)).collect();
    let x: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| (0..p).map(|a| (r[a] - mu[a]) / sd[a]).collect())
        .collect();
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>();

    let mut centers = vec![x[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = x.iter().map(|r| dist2(r, &centers[0])).collect();
    while centers.len() < c {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(x[next].clone());
        for (i, r) in x.iter().enumerate() {
            d2[i] = d2[i].min(dist2(r, &centers[centers.len() - 1]));
        }
    }

    let mut z = vec![0; n];
    for iter in 0..100 {
        let mut changed = false;
        for (i, r) in x.iter().enumerate() {
            let best = (0..c)
                .min_by(|&a, &b| dist2(r, &centers[a]).total_cmp(&dist2(r, &centers[b])))
                .expect("c >= 1");
            if best != z[i] || iter == 0 {
                changed |= best != z[i];
                z[i] = best;
            }
        }
        if !changed && iter > 0 {
            break;
        }
        for (k, center) in centers.iter_mut().enumerate() {
            let mut count = 0.0;
            let mut sum = vec![0.0; p];
            for (i, r) in x.iter().enumerate() {
                if z[i] == k {
                    count += 1.0;
                    for a in 0..p {
                        sum[a] += r[a];
                    }
                }
            }
            if count > 0.0 {
                *center = sum.into_iter().map(|s| s / count).collect();
            }
        }
    }
    z
}

/// Outcome of one EM run before packaging.
#[derive(Debug, Clone)]
pub struct RunState {
    pub comps: Vec<ClusterParams>,
    pub tau: Vec<Vec<f64>>,
    pub z: Vec<usize>,
    /// Assignment the final parameters were estimated on.
    pub z_fit: Vec<usize>,
    pub loglik: f64,
    pub objective: f64,
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Runs classification EM from the initial assignment `z0`.
pub fn run_em(
    prep: &Prepared,
    c: usize,
    z0: Vec<usize>,
    opts: &MStepOptions,
    max_iter: usize,
    tol: f64,
) -> Result<RunState> {
    let mut z = z0;
    let mut prev: Option<(Vec<ClusterParams>, Vec<usize>)> = None;
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut last = None;
    while iterations < max_iter {
        iterations += 1;
        let comps = m_step(
            prep,
            &z,
            c,
            opts,
            prev.as_ref().map(|(p, pz)| Previous { comps: p, z: pz }),
        )?;
        let logdens = joint_log_densities(prep, &comps, opts.likelihood)?;
        let (tau, loglik) = responsibilities(&logdens)?;
        let z_new = hard_assign(&tau);
        let obj = classification_loglik(&logdens, &z_new);
        let delta = trace.last().map(|&o: &f64| (obj - o).abs());
        trace.push(obj);
        let z_fit = std::mem::replace(&mut z, z_new.clone());
        last = Some((tau, loglik, obj, z_fit.clone()));
        prev = Some((comps, z_fit));
        if delta.is_some_and(|d| d < tol) {
            converged = true;
            break;
        }
    }
    let (tau, loglik, objective, z_fit) = last.expect("at least one iteration");
    let (comps, _) = prev.expect("at least one iteration");
    Ok(RunState {
        comps,
        tau,
        z,
        z_fit,
        loglik,
        objective,
        trace,
        iterations,
        converged,
    })
}

/// Reorders components by descending weight (ties by first mean coordinate).
pub fn canonicalize(state: &mut RunState) {
    let c = state.comps.len();
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (&state.comps[a], &state.comps[b]);
        pb.w.total_cmp(&pa.w).then_with(|| {
            let ma = pa.mu.first().copied().unwrap_or(0.0);
            let mb = pb.mu.first().copied().unwrap_or(0.0);
            ma.total_cmp(&mb)
        })
    });
    let mut inverse = vec![0; c];
    for (new, &old) in order.iter().enumerate() {
        inverse[old] = new;
    }
    state.comps = order.iter().map(|&k| state.comps[k].clone()).collect();
    for row in &mut state.tau {
        *row = order.iter().map(|&k| row[k]).collect();
    }
    state.z.iter_mut().for_each(|k| *k = inverse[*k]);
    state.z_fit.iter_mut().for_each(|k| *k = inverse[*k]);
}

fn package(
    prep: &Prepared,
    ds: &Dataset,
    cfg: &FitConfig,
    variant: Variant,
    mut state: RunState,
    seed: u64,
    start: usize,
) -> ModelFit {
    canonicalize(&mut state);
    let c = state.comps.len();
    // Wald inference for each component's fixed effects on its members.
    for (k, comp) in state.comps.iter_mut().enumerate() {
        let w: Vec<f64> = state.z_fit.iter().map(|&zk| if zk == k { 1.0 } else { 0.0 }).collect();
        comp.regression.compute_standard_errors(&prep.x, &prep.groups, &prep.y, &w);
    }
    let n_params = parameter_count(c, prep.m(), prep.p(), &prep.k_r, prep.h(), variant);
    let bic = -2.0 * state.loglik + n_params as f64 * (prep.n() as f64).ln();
    ModelFit {
        schema_version: SCHEMA_VERSION.to_string(),
        variant,
        c,
        components: state.comps,
        tau: state.tau,
        z: state.z,
        loglik: state.loglik,
        classification_loglik: state.objective,
        n_params,
        bic,
        trace: state.trace,
        iterations: state.iterations,
        converged: state.converged,
        seed,
        start,
        design_names: prep.design_names.clone(),
        schema: ds.schema(),
        config: cfg.clone(),
        train_cutoff: None,
        train_accuracy: None,
    }
}

fn initial_labels(prep: &Prepared, c: usize, cfg: &FitConfig, min: usize, seed: u64) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match cfg.init {
        crate::model::InitStrategy::Random => random_labels(prep.n(), c, min, &mut rng),
        crate::model::InitStrategy::Kmeans => {
            let z = kmeans_labels(&prep.u, c, &mut rng);
            Ok(z)
        }
    }
}

fn run_start(prep: &Prepared, ds: &Dataset, c: usize, cfg: &FitConfig, variant: Variant, start: usize) -> Result<ModelFit> {
    let seed = start_seed(cfg.seed, c, start);
    let opts = MStepOptions::from_config(cfg, prep.m(), variant);
    let z0 = initial_labels(prep, c, cfg, opts.min_cluster_size, seed)?;
    let state = run_em(prep, c, z0, &opts, cfg.max_iter, cfg.tol)?;
    Ok(package(prep, ds, cfg, variant, state, seed, start))
}

/// One start's record in a multi-start run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartRecord {
    pub c: usize,
    pub start: usize,
    pub seed: u64,
    pub loglik: Option<f64>,
    pub iterations: Option<usize>,
    /// Largest drop between consecutive objective values (0 when monotone).
    pub max_decrease: Option<f64>,
    pub error: Option<String>,
}

/// Largest decrease between consecutive entries of an objective trace.
pub fn max_decrease(trace: &[f64]) -> f64 {
    trace.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max)
}

/// Best (highest observed log-likelihood) of `cfg.n_starts` runs with `c`
/// clusters, plus a record of every start.
pub fn fit_best(
    ds: &Dataset,
    c: usize,
    cfg: &FitConfig,
    variant: Variant,
) -> Result<(Option<ModelFit>, Vec<StartRecord>)> {
    cfg.validate()?;
    let prep = Prepared::new(ds, &cfg.formula, cfg.ising_domain)?;
    let results: Vec<Result<ModelFit>> = (0..cfg.n_starts)
        .into_par_iter()
        .map(|s| run_start(&prep, ds, c, cfg, variant, s))
        .collect();
    let mut best: Option<ModelFit> = None;
    let mut records = Vec::new();
    for (s, r) in results.into_iter().enumerate() {
        let seed = start_seed(cfg.seed, c, s);
        match r {
            Ok(fit) => {
                log::debug!("C={c} start {s}: loglik {:.4} in {} iterations", fit.loglik, fit.iterations);
                records.push(StartRecord {
                    c,
                    start: s,
                    seed,
                    loglik: Some(fit.loglik),
                    iterations: Some(fit.iterations),
                    max_decrease: Some(max_decrease(&fit.trace)),
                    error: None,
                });
                if best.as_ref().is_none_or(|b| fit.loglik > b.loglik) {
                    best = Some(fit);
                }
            }
            Err(e) => {
                log::info!("C={c} start {s} failed: {e}");
                records.push(StartRecord {
                    c,
                    start: s,
                    seed,
                    loglik: None,
                    iterations: None,
                    max_decrease: None,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    Ok((best, records))
}

/// A single start with an explicit seed.
pub fn fit_single(ds: &Dataset, c: usize, cfg: &FitConfig, seed: u64) -> Result<ModelFit> {
    fit_single_variant(ds, c, cfg, seed, Variant::Full)
}

/// The variant whose binary covariates are independent Bernoulli columns.
pub fn fit_variant_nod(ds: &Dataset, c: usize, cfg: &FitConfig, seed: u64) -> Result<ModelFit> {
    fit_single_variant(ds, c, cfg, seed, Variant::NoD)
}

pub fn fit_single_variant(ds: &Dataset, c: usize, cfg: &FitConfig, seed: u64, variant: Variant) -> Result<ModelFit> {
    cfg.validate()?;
    if c == 0 {
        return Err(Error::Config("C must be at least 1".into()));
    }
    let prep = Prepared::new(ds, &cfg.formula, cfg.ising_domain)?;
    let opts = MStepOptions::from_config(cfg, prep.m(), variant);
    let z0 = initial_labels(&prep, c, cfg, opts.min_cluster_size, seed)?;
    let state = run_em(&prep, c, z0, &opts, cfg.max_iter, cfg.tol)?;
    Ok(package(&prep, ds, cfg, variant, state, seed, 0))
}

/// One row of the model-selection table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BicRow {
    pub c: usize,
    pub bic: Option<f64>,
    pub loglik: Option<f64>,
    pub n_params: Option<usize>,
    pub best_start: Option<usize>,
    pub failed_starts: usize,
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub best: ModelFit,
    pub table: Vec<BicRow>,
    pub starts: Vec<StartRecord>,
    /// Best fit for every C that produced one.
    pub fits: Vec<ModelFit>,
}

/// Fits every C in the grid and keeps the lowest BIC.
pub fn fit_select(ds: &Dataset, cfg: &FitConfig) -> Result<Selection> {
    fit_select_variant(ds, cfg, Variant::Full)
}

pub fn fit_select_variant(ds: &Dataset, cfg: &FitConfig, variant: Variant) -> Result<Selection> {
    cfg.validate()?;
    let mut table = Vec::new();
    let mut starts = Vec::new();
    let mut fits: Vec<ModelFit> = Vec::new();
    for &c in &cfg.c_grid {
        let (best, records) = fit_best(ds, c, cfg, variant)?;
        let failed = records.iter().filter(|r| r.error.is_some()).count();
        starts.extend(records);
        table.push(BicRow {
            c,
            bic: best.as_ref().map(|f| f.bic),
            loglik: best.as_ref().map(|f| f.loglik),
            n_params: best.as_ref().map(|f| f.n_params),
            best_start: best.as_ref().map(|f| f.start),
            failed_starts: failed,
        });
        fits.extend(best);
    }
    let best = fits
        .iter()
        .min_by(|a, b| a.bic.total_cmp(&b.bic))
        .cloned()
        .ok_or_else(|| Error::InvalidData("every start failed for every C".into()))?;
    Ok(Selection {
        best,
        table,
        starts,
        fits,
    })
}

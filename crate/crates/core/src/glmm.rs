//! Weighted logistic regression with a scalar Gaussian random intercept per
//! group, fitted by maximizing the Laplace approximation to the marginal
//! likelihood, plus the plain logistic GLM.
//!
//! Laplace objective for group `j` with mode `b_j`:
//!
//! `l_j = sum_i w_i log p(y_i | f_i'beta + b_j) - b_j^2 / (2 s) - log(s H_j) / 2`
//!
//! where `s = sigma_b^2` and `H_j = sum_i w_i pi_i (1 - pi_i) + 1/s`. The outer
//! optimizer works on `(beta, log sigma_b)` with an analytic gradient that
//! accounts for the dependence of each mode on the parameters.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::optim::{self, BfgsOptions};

/// Default bound on |beta| used to keep separated fits finite.
pub const BETA_CAP: f64 = 15.0;
const LOG_SIGMA_MIN: f64 = -9.210_340_371_976_182; // ln 1e-4
const LOG_SIGMA_MAX: f64 = 3.912_023_005_428_146; // ln 50

pub(crate) fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(a: f64) -> f64 {
    if a > 0.0 {
        a + (-a).exp().ln_1p()
    } else {
        a.exp().ln_1p()
    }
}

/// `log p(y | eta)` for a Bernoulli response with logit link.
pub fn bernoulli_logpmf(y: u8, eta: f64) -> f64 {
    if y == 1 {
        -softplus(-eta)
    } else {
        -softplus(eta)
    }
}

fn wald_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

fn check_inputs(x: &DMatrix<f64>, y: &[u8], w: &[f64]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::LengthMismatch(x.nrows(), y.len()));
    }
    if w.len() != y.len() {
        return Err(Error::LengthMismatch(w.len(), y.len()));
    }
    if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidData("weights must be finite and non-negative".into()));
    }
    let (mut w0, mut w1) = (0.0, 0.0);
    for (&yi, &wi) in y.iter().zip(w) {
        if yi == 1 {
            w1 += wi;
        } else {
            w0 += wi;
        }
    }
    if w0 <= 0.0 || w1 <= 0.0 {
        return Err(Error::SingleClass);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub beta: Vec<f64>,
    pub std_errors: Option<Vec<f64>>,
    pub p_values: Option<Vec<f64>>,
    pub loglik: f64,
    pub converged: bool,
    pub separated: bool,
    pub iterations: usize,
}

impl GlmFit {
    pub fn predict_proba(&self, row: &[f64]) -> f64 {
        sigmoid(dot(row, &self.beta))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn weighted_loglik(x: &DMatrix<f64>, y: &[u8], w: &[f64], beta: &DVector<f64>) -> f64 {
    let eta = x * beta;
    (0..y.len())
        .filter(|&i| w[i] > 0.0)
        .map(|i| w[i] * bernoulli_logpmf(y[i], eta[i]))
        .sum()
}

fn information(x: &DMatrix<f64>, w: &[f64], eta: &DVector<f64>) -> DMatrix<f64> {
    let m = x.ncols();
    let mut info = DMatrix::zeros(m, m);
    for i in 0..x.nrows() {
        if w[i] <= 0.0 {
            continue;
        }
        let p = sigmoid(eta[i]);
        let v = w[i] * p * (1.0 - p);
        for a in 0..m {
            let xa = x[(i, a)] * v;
            if xa == 0.0 {
                continue;
            }
            for b in 0..=a {
                info[(a, b)] += xa * x[(i, b)];
            }
        }
    }
    for a in 0..m {
        for b in 0..a {
            info[(b, a)] = info[(a, b)];
        }
    }
    info
}

fn solve_spd(a: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Some(ch.solve(rhs));
    }
    let scale = a.diagonal().iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
    let shifted = a + DMatrix::identity(a.nrows(), a.ncols()) * (1e-10 * scale);
    shifted.cholesky().map(|ch| ch.solve(rhs))
}

fn spd_inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    a.clone().cholesky().map(|ch| ch.inverse())
}

/// Weighted logistic regression by Newton-Raphson (IRLS) with step halving.
/// Converges when the relative deviance change drops below 1e-8; coefficients
/// are clamped to `|beta| <= BETA_CAP` and flagged on separation.
pub fn fit_logistic_glm(x: &DMatrix<f64>, y: &[u8], w: &[f64]) -> Result<GlmFit> {
    check_inputs(x, y, w)?;
    let m = x.ncols();
    let mut beta = DVector::zeros(m);
    let mut ll = weighted_loglik(x, y, w, &beta);
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..100 {
        iterations += 1;
        let eta = x * &beta;
        let mut score = DVector::zeros(m);
        for i in 0..y.len() {
            if w[i] > 0.0 {
                let r = w[i] * (y[i] as f64 - sigmoid(eta[i]));
                for a in 0..m {
                    score[a] += r * x[(i, a)];
                }
            }
        }
        let info = information(x, w, &eta);
        let Some(step) = solve_spd(&info, &score) else {
            break;
        };
        let mut t = 1.0;
        let mut next = None;
        for _ in 0..30 {
            let cand = (&beta + &step * t).map(|b: f64| b.clamp(-BETA_CAP, BETA_CAP));
            let l = weighted_loglik(x, y, w, &cand);
            if l >= ll - 1e-12 * ll.abs() {
                next = Some((cand, l));
                break;
            }
            t *= 0.5;
        }
        let Some((nb, nl)) = next else {
            break;
        };
        let dev_change = 2.0 * (nl - ll).abs() / (2.0 * nl.abs() + 0.1);
        beta = nb;
        ll = nl;
        if dev_change < 1e-8 {
            converged = true;
            break;
        }
    }
    let separated = beta.iter().any(|b| b.abs() >= BETA_CAP - 1e-9);
    let eta = x * &beta;
    let (std_errors, p_values) = match spd_inverse(&information(x, w, &eta)) {
        Some(inv) if !separated => {
            let se: Vec<f64> = (0..m).map(|a| inv[(a, a)].max(0.0).sqrt()).collect();
            let p = beta.iter().zip(&se).map(|(b, s)| wald_p(b / s)).collect();
            (Some(se), Some(p))
        }
        _ => (None, None),
    };
    Ok(GlmFit {
        beta: beta.iter().copied().collect(),
        std_errors,
        p_values,
        loglik: ll,
        converged: converged && !separated,
        separated,
        iterations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticMixedFit {
    pub beta: Vec<f64>,
    pub std_errors: Option<Vec<f64>>,
    pub p_values: Option<Vec<f64>>,
    pub sigma_b: f64,
    /// Conditional mode of each group's intercept (0 for unseen groups).
    pub b: Vec<f64>,
    /// Conditional standard deviation of each mode (sigma_b for unseen groups).
    pub b_sd: Vec<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub separated: bool,
    pub n_used: f64,
}

impl LogisticMixedFit {
    pub fn intercept(&self, group: usize) -> f64 {
        self.b.get(group).copied().unwrap_or(0.0)
    }

    pub fn linear_predictor(&self, row: &[f64], b: f64) -> f64 {
        dot(row, &self.beta) + b
    }

    pub fn probability(&self, row: &[f64], b: f64) -> f64 {
        sigmoid(self.linear_predictor(row, b))
    }

    /// Recomputes Wald standard errors from the Laplace objective's Hessian.
    pub fn compute_standard_errors(
        &mut self,
        x: &DMatrix<f64>,
        groups: &[usize],
        y: &[u8],
        w: &[f64],
    ) {
        let n_groups = self.b.len();
        let mut problem = LaplaceProblem::new(x, groups, n_groups, y, w);
        problem.modes = self.b.clone();
        let m = x.ncols();
        let mut params = self.beta.clone();
        let fixed_sigma = self.sigma_b <= 0.0;
        if !fixed_sigma {
            params.push(self.sigma_b.ln());
        }
        let hess = optim::hessian_from_gradient(
            |p, g| {
                if fixed_sigma {
                    problem.eval(p, None, g);
                } else {
                    problem.eval(&p[..m], Some(p[m]), g);
                }
                g.iter_mut().for_each(|v| *v = -*v);
            },
            &params,
            1e-5,
        );
        let k = params.len();
        let h = DMatrix::from_fn(k, k, |i, j| hess[i][j]);
        match spd_inverse(&h) {
            Some(inv) if !self.separated => {
                let se: Vec<f64> = (0..m).map(|a| inv[(a, a)].max(0.0).sqrt()).collect();
                self.p_values = Some(
                    self.beta
                        .iter()
                        .zip(&se)
                        .map(|(b, s)| wald_p(b / s))
                        .collect(),
                );
                self.std_errors = Some(se);
            }
            _ => {
                self.std_errors = None;
                self.p_values = None;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct MixedOptions {
    /// Starting `(beta, sigma_b)`; a GLM fit is used when absent.
    pub init: Option<(Vec<f64>, f64)>,
    /// Starting modes per group.
    pub init_modes: Option<Vec<f64>>,
    /// Holds sigma_b fixed (0 reduces to the plain GLM likelihood).
    pub fixed_sigma: Option<f64>,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub beta_cap: f64,
    pub standard_errors: bool,
}

impl Default for MixedOptions {
    fn default() -> Self {
        Self {
            init: None,
            init_modes: None,
            fixed_sigma: None,
            max_iter: 200,
            grad_tol: 1e-6,
            beta_cap: BETA_CAP,
            standard_errors: true,
        }
    }
}

struct LaplaceProblem<'a> {
    x: &'a DMatrix<f64>,
    y: &'a [u8],
    w: &'a [f64],
    /// Active (positive-weight) rows of each group.
    rows: Vec<Vec<usize>>,
    modes: Vec<f64>,
    eta: Vec<f64>,
}

impl<'a> LaplaceProblem<'a> {
    fn new(x: &'a DMatrix<f64>, groups: &[usize], n_groups: usize, y: &'a [u8], w: &'a [f64]) -> Self {
        let mut rows = vec![Vec::new(); n_groups];
        for (i, &g) in groups.iter().enumerate() {
            if w[i] > 0.0 {
                rows[g].push(i);
            }
        }
        Self {
            x,
            y,
            w,
            rows,
            modes: vec![0.0; n_groups],
            eta: vec![0.0; y.len()],
        }
    }

    fn fixed_predictor(&mut self, beta: &[f64]) {
        let m = beta.len();
        for group in &self.rows {
            for &i in group {
                let mut e = 0.0;
                for a in 0..m {
                    e += self.x[(i, a)] * beta[a];
                }
                self.eta[i] = e;
            }
        }
    }

    /// Newton solve for the mode of group `j` at variance `s`.
    fn solve_mode(&mut self, j: usize, s: f64) -> f64 {
        let mut b = self.modes[j];
        if !b.is_finite() {
            b = 0.0;
        }
        for _ in 0..100 {
            let (mut g, mut h) = (-b / s, 1.0 / s);
            for &i in &self.rows[j] {
                let p = sigmoid(self.eta[i] + b);
                g += self.w[i] * (self.y[i] as f64 - p);
                h += self.w[i] * p * (1.0 - p);
            }
            let step = (g / h).clamp(-10.0, 10.0);
            b += step;
            if g.abs() <= 1e-11 || step.abs() <= 1e-14 * (1.0 + b.abs()) {
                break;
            }
        }
        self.modes[j] = b;
        b
    }

    /// Laplace log-likelihood and its gradient (beta..., log sigma). With
    /// `log_sigma = None` the random intercept is absent.
    fn eval(&mut self, beta: &[f64], log_sigma: Option<f64>, grad: &mut [f64]) -> f64 {
        let m = beta.len();
        grad.iter_mut().for_each(|g| *g = 0.0);
        self.fixed_predictor(beta);
        let mut total = 0.0;
        let Some(theta) = log_sigma else {
            for j in 0..self.rows.len() {
                for &i in &self.rows[j] {
                    let eta = self.eta[i];
                    let r = self.w[i] * (self.y[i] as f64 - sigmoid(eta));
                    total += self.w[i] * bernoulli_logpmf(self.y[i], eta);
                    for a in 0..m {
                        grad[a] += r * self.x[(i, a)];
                    }
                }
            }
            return total;
        };
        let s = (2.0 * theta).exp();
        let mut gx = vec![0.0; m];
        let mut ax = vec![0.0; m];
        let mut a2x = vec![0.0; m];
        for j in 0..self.rows.len() {
            if self.rows[j].is_empty() {
                continue;
            }
            let b = self.solve_mode(j, s);
            gx.iter_mut().for_each(|v| *v = 0.0);
            ax.iter_mut().for_each(|v| *v = 0.0);
            a2x.iter_mut().for_each(|v| *v = 0.0);
            let (mut lj, mut a_sum, mut a2_sum) = (0.0, 0.0, 0.0);
            for &i in &self.rows[j] {
                let eta = self.eta[i] + b;
                let p = sigmoid(eta);
                let wi = self.w[i];
                let v = wi * p * (1.0 - p);
                let v2 = v * (1.0 - 2.0 * p);
                let r = wi * (self.y[i] as f64 - p);
                lj += wi * bernoulli_logpmf(self.y[i], eta);
                a_sum += v;
                a2_sum += v2;
                for a in 0..m {
                    let xa = self.x[(i, a)];
                    gx[a] += r * xa;
                    ax[a] += v * xa;
                    a2x[a] += v2 * xa;
                }
            }
            let h = a_sum + 1.0 / s;
            total += lj - b * b / (2.0 * s) - 0.5 * (s * a_sum).ln_1p();
            for a in 0..m {
                let db = -ax[a] / h;
                grad[a] += gx[a] - 0.5 / h * (a2x[a] + a2_sum * db);
            }
            let db_dtheta = 2.0 * b / s / h;
            grad[m] += b * b / s - s * a_sum / (1.0 + s * a_sum) - 0.5 * a2_sum / h * db_dtheta;
        }
        total
    }
}

/// Fits `logit(pi_ij) = f_ij' beta + b_j`, `b_j ~ N(0, sigma_b^2)`, to the rows
/// with positive weight.
pub fn fit_logistic_mixed(
    x: &DMatrix<f64>,
    groups: &[usize],
    n_groups: usize,
    y: &[u8],
    w: &[f64],
    opts: &MixedOptions,
) -> Result<LogisticMixedFit> {
    check_inputs(x, y, w)?;
    if groups.len() != y.len() {
        return Err(Error::LengthMismatch(groups.len(), y.len()));
    }
    if let Some(&g) = groups.iter().find(|&&g| g >= n_groups) {
        return Err(Error::IndexOutOfRange {
            index: g,
            len: n_groups,
        });
    }
    let m = x.ncols();
    let n_used: f64 = w.iter().sum();
    let (beta0, sigma0) = match &opts.init {
        Some((b, s)) if b.len() == m => (b.clone(), *s),
        _ => {
            let glm = fit_logistic_glm(x, y, w)?;
            (glm.beta, 1.0)
        }
    };
    let mut problem = LaplaceProblem::new(x, groups, n_groups, y, w);
    if let Some(modes) = &opts.init_modes {
        if modes.len() == n_groups {
            problem.modes = modes.clone();
        }
    }

    let cap = opts.beta_cap;
    let fixed = opts.fixed_sigma;
    let (mut lower, mut upper) = (vec![-cap; m], vec![cap; m]);
    let mut x0: Vec<f64> = beta0.iter().map(|b| b.clamp(-cap, cap)).collect();
    if fixed.is_none() {
        lower.push(LOG_SIGMA_MIN);
        upper.push(LOG_SIGMA_MAX);
        x0.push(sigma0.max(1e-3).ln().clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX));
    }
    let bopts = BfgsOptions {
        max_iter: opts.max_iter,
        grad_tol: opts.grad_tol,
        lower: Some(lower),
        upper: Some(upper),
    };
    let fixed_theta = match fixed {
        Some(s) if s > 0.0 => Some(s.ln()),
        _ => None,
    };
    let min = optim::minimize(
        |p, g| {
            let theta = match fixed {
                None => Some(p[m]),
                Some(_) => fixed_theta,
            };
            let mut full = vec![0.0; m + 1];
            let v = problem.eval(&p[..m], theta, &mut full);
            for (gi, fi) in g.iter_mut().zip(&full) {
                *gi = -fi;
            }
            -v
        },
        &x0,
        &bopts,
    );

    let beta: Vec<f64> = min.x[..m].to_vec();
    let sigma_b = match fixed {
        None => min.x[m].exp(),
        Some(s) => s.max(0.0),
    };
    // Final modes at the optimum.
    let mut g = vec![0.0; m + 1];
    let theta = if sigma_b > 0.0 { Some(sigma_b.ln()) } else { None };
    let loglik = problem.eval(&beta, theta, &mut g);
    let s = sigma_b * sigma_b;
    let mut b = vec![0.0; n_groups];
    let mut b_sd = vec![sigma_b; n_groups];
    if sigma_b > 0.0 {
        for j in 0..n_groups {
            if problem.rows[j].is_empty() {
                continue;
            }
            b[j] = problem.modes[j];
            let mut h = 1.0 / s;
            for &i in &problem.rows[j] {
                let p = sigmoid(problem.eta[i] + b[j]);
                h += w[i] * p * (1.0 - p);
            }
            b_sd[j] = 1.0 / h.sqrt();
        }
    } else {
        b_sd.iter_mut().for_each(|v| *v = 0.0);
    }
    let separated = beta.iter().any(|v| v.abs() >= cap - 1e-9);
    let mut fit = LogisticMixedFit {
        beta,
        std_errors: None,
        p_values: None,
        sigma_b,
        b,
        b_sd,
        loglik,
        converged: min.converged && !separated,
        separated,
        n_used,
    };
    if opts.standard_errors {
        fit.compute_standard_errors(x, groups, y, w);
    }
    Ok(fit)
}

/// Per-row `log p(y | x, beta, b_hat)` with each group's mode plugged in
/// (0 for groups the fit has not seen).
pub fn conditional_loglik(
    fit: &LogisticMixedFit,
    x: &DMatrix<f64>,
    groups: &[usize],
    y: &[u8],
) -> Vec<f64> {
    (0..y.len())
        .map(|i| {
            let eta: f64 = (0..x.ncols()).map(|a| x[(i, a)] * fit.beta[a]).sum::<f64>()
                + fit.intercept(groups[i]);
            bernoulli_logpmf(y[i], eta)
        })
        .collect()
}

/// Gauss-Hermite nodes and weights for `int f(t) exp(-t^2) dt`
/// (Golub-Welsch).
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            ((i.max(j)) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = jacobi.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let v0 = eig.eigenvectors[(0, k)];
            (eig.eigenvalues[k], std::f64::consts::PI.sqrt() * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Per-row `log int p(y | x'beta + b) N(b; 0, sigma_b^2) db`, the
/// random intercept integrated out row by row.
pub fn marginal_row_loglik(fit: &LogisticMixedFit, x: &DMatrix<f64>, y: &[u8]) -> Vec<f64> {
    let (nodes, weights) = gauss_hermite(24);
    let scale = std::f64::consts::SQRT_2 * fit.sigma_b;
    (0..y.len())
        .map(|i| {
            let eta: f64 = (0..x.ncols()).map(|a| x[(i, a)] * fit.beta[a]).sum();
            let terms: Vec<f64> = nodes
                .iter()
                .zip(&weights)
                .map(|(t, wk)| (wk / std::f64::consts::PI.sqrt()).ln() + bernoulli_logpmf(y[i], eta + scale * t))
                .collect();
            crate::dists::log_sum_exp(&terms)
        })
        .collect()
}

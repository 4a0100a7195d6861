//! Ising model over `h` binary variables with thresholds `nu` and a symmetric,
//! zero-diagonal interaction matrix `gamma`:
//!
//! `P(d) = exp(sum_l nu_l d_l + sum_{l<k} gamma_lk d_l d_k) / S`
//!
//! States live in either the {0,1} or the {-1,1} domain. Exact evaluation
//! enumerates all `2^h` states and is capped at [`H_MAX`]; estimation uses
//! the pseudo-likelihood (product of full conditionals), which needs no
//! normalizer.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::log_sum_exp;
use crate::error::{Error, Result};
use crate::optim::{self, BfgsOptions};

/// Largest `h` for which the normalizer is computed by enumeration.
pub const H_MAX: usize = 15;
/// Threshold assigned to a variable that is constant in the fitted rows.
pub const NU_CAP: f64 = 10.0;
/// Box on every free parameter during pseudo-likelihood fits.
pub const PARAM_CAP: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Domain {
    #[default]
    #[serde(rename = "01")]
    ZeroOne,
    #[serde(rename = "pm1")]
    PlusMinusOne,
}

impl Domain {
    pub fn low(self) -> i8 {
        match self {
            Domain::ZeroOne => 0,
            Domain::PlusMinusOne => -1,
        }
    }

    pub fn high(self) -> i8 {
        1
    }

    pub fn contains(self, v: i8) -> bool {
        v == self.low() || v == self.high()
    }

    pub fn label(self) -> &'static str {
        match self {
            Domain::ZeroOne => "{0,1}",
            Domain::PlusMinusOne => "{-1,1}",
        }
    }

    pub fn other(self) -> Domain {
        match self {
            Domain::ZeroOne => Domain::PlusMinusOne,
            Domain::PlusMinusOne => Domain::ZeroOne,
        }
    }
}

impl std::str::FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "01" | "0,1" | "zero-one" => Ok(Domain::ZeroOne),
            "pm1" | "-1,1" | "plus-minus-one" => Ok(Domain::PlusMinusOne),
            _ => Err(Error::Config(format!("unknown Ising domain `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IsingParts {
    nu: Vec<f64>,
    gamma: Vec<Vec<f64>>,
    domain: Domain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IsingParts", into = "IsingParts")]
pub struct IsingModel {
    nu: Vec<f64>,
    gamma: Vec<Vec<f64>>,
    domain: Domain,
    log_s: Option<f64>,
}

impl TryFrom<IsingParts> for IsingModel {
    type Error = Error;

    fn try_from(p: IsingParts) -> Result<Self> {
        IsingModel::new(p.nu, p.gamma, p.domain)
    }
}

impl From<IsingModel> for IsingParts {
    fn from(m: IsingModel) -> Self {
        IsingParts {
            nu: m.nu,
            gamma: m.gamma,
            domain: m.domain,
        }
    }
}

/// Position of pair `(l, k)`, `l < k`, in the packed upper triangle.
pub fn pair_index(h: usize, l: usize, k: usize) -> usize {
    debug_assert!(l < k && k < h);
    l * (2 * h - l - 1) / 2 + (k - l - 1)
}

/// All `2^h` states; bit `l` of the index selects the high value of `d_l`.
pub fn enumerate_states(h: usize, domain: Domain) -> Vec<Vec<i8>> {
    (0..1usize << h)
        .map(|s| {
            (0..h)
                .map(|l| if s >> l & 1 == 1 { domain.high() } else { domain.low() })
                .collect()
        })
        .collect()
}

impl IsingModel {
    pub fn new(nu: Vec<f64>, gamma: Vec<Vec<f64>>, domain: Domain) -> Result<Self> {
        let h = nu.len();
        if gamma.len() != h || gamma.iter().any(|r| r.len() != h) {
            return Err(Error::LengthMismatch(h, gamma.len()));
        }
        for l in 0..h {
            if gamma[l][l] != 0.0 {
                return Err(Error::InvalidData(format!(
                    "interaction matrix has nonzero diagonal at {l}"
                )));
            }
            for k in 0..l {
                let (a, b) = (gamma[l][k], gamma[k][l]);
                if (a - b).abs() > 1e-12 * (1.0 + a.abs()) {
                    return Err(Error::InvalidData(format!(
                        "interaction matrix is not symmetric at ({k},{l})"
                    )));
                }
            }
        }
        if nu.iter().chain(gamma.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite Ising parameter".into()));
        }
        let mut m = Self {
            nu,
            gamma,
            domain,
            log_s: None,
        };
        if h <= H_MAX {
            m.log_s = Some(m.compute_log_normalizer());
        }
        Ok(m)
    }

    /// Builds from thresholds and the packed upper triangle
    /// `(g12, g13, ..., g1h, g23, ...)`.
    pub fn from_pairs(nu: Vec<f64>, pairs: &[f64], domain: Domain) -> Result<Self> {
        let h = nu.len();
        if pairs.len() != h * h.saturating_sub(1) / 2 {
            return Err(Error::LengthMismatch(pairs.len(), h * h.saturating_sub(1) / 2));
        }
        let mut gamma = vec![vec![0.0; h]; h];
        for l in 0..h {
            for k in l + 1..h {
                let v = pairs[pair_index(h, l, k)];
                gamma[l][k] = v;
                gamma[k][l] = v;
            }
        }
        Self::new(nu, gamma, domain)
    }

    pub fn independent(nu: Vec<f64>, domain: Domain) -> Self {
        let h = nu.len();
        Self::new(nu, vec![vec![0.0; h]; h], domain).expect("zero interactions are valid")
    }

    pub fn h(&self) -> usize {
        self.nu.len()
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    pub fn gamma(&self) -> &[Vec<f64>] {
        &self.gamma
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    /// Packed parameter vector `[nu, upper-triangle gamma]`.
    pub fn params(&self) -> Vec<f64> {
        let h = self.h();
        let mut p = self.nu.clone();
        for l in 0..h {
            for k in l + 1..h {
                p.push(self.gamma[l][k]);
            }
        }
        p
    }

    pub fn from_params(h: usize, params: &[f64], domain: Domain) -> Result<Self> {
        Self::from_pairs(params[..h].to_vec(), &params[h..], domain)
    }

    /// Unnormalized log-weight; each pair contributes once.
    pub fn energy(&self, d: &[i8]) -> f64 {
        let h = self.h();
        let mut e = 0.0;
        for l in 0..h {
            let dl = d[l] as f64;
            e += self.nu[l] * dl;
            for k in l + 1..h {
                e += self.gamma[l][k] * dl * d[k] as f64;
            }
        }
        e
    }

    fn compute_log_normalizer(&self) -> f64 {
        let energies: Vec<f64> = enumerate_states(self.h(), self.domain)
            .iter()
            .map(|s| self.energy(s))
            .collect();
        log_sum_exp(&energies)
    }

    pub fn log_normalizer(&self) -> Result<f64> {
        self.log_s.ok_or(Error::IsingTooLarge {
            h: self.h(),
            max: H_MAX,
        })
    }

    fn check_state(&self, d: &[i8]) -> Result<()> {
        if d.len() != self.h() {
            return Err(Error::LengthMismatch(d.len(), self.h()));
        }
        for &v in d {
            if !self.domain.contains(v) {
                return Err(Error::DomainMismatch {
                    value: v,
                    domain: self.domain.label(),
                });
            }
        }
        Ok(())
    }

    pub fn logpmf(&self, d: &[i8]) -> Result<f64> {
        self.check_state(d)?;
        Ok(self.energy(d) - self.log_normalizer()?)
    }

    /// Local field `nu_l + sum_{k != l} gamma_lk d_k`.
    pub fn local_field(&self, d: &[i8], l: usize) -> f64 {
        let row = &self.gamma[l];
        let mut a = self.nu[l];
        for (k, &dk) in d.iter().enumerate() {
            if k != l {
                a += row[k] * dk as f64;
            }
        }
        a
    }

    /// `P(d_l | d_k, k != l)` evaluated at the observed `d_l`.
    pub fn conditional(&self, d: &[i8], l: usize) -> f64 {
        self.log_conditional(d, l).exp()
    }

    pub fn log_conditional(&self, d: &[i8], l: usize) -> f64 {
        let a = self.local_field(d, l);
        let dl = d[l] as f64;
        match self.domain {
            Domain::ZeroOne => dl * a - softplus(a),
            Domain::PlusMinusOne => dl * a - log_2cosh(a),
        }
    }

    /// Probability of every state, in [`enumerate_states`] order.
    pub fn state_probabilities(&self) -> Result<Vec<(Vec<i8>, f64)>> {
        let log_s = self.log_normalizer()?;
        Ok(enumerate_states(self.h(), self.domain)
            .into_iter()
            .map(|s| {
                let p = (self.energy(&s) - log_s).exp();
                (s, p)
            })
            .collect())
    }

    /// Equivalent model in the other domain under the state map `s = 2d - 1`.
    pub fn convert_domain(&self, target: Domain) -> IsingModel {
        if target == self.domain {
            return self.clone();
        }
        let h = self.h();
        let row_sum = |l: usize| -> f64 { self.gamma[l].iter().sum() };
        let (nu, gamma) = match target {
            Domain::PlusMinusOne => (
                (0..h).map(|l| self.nu[l] / 2.0 + row_sum(l) / 4.0).collect(),
                self.gamma
                    .iter()
                    .map(|r| r.iter().map(|g| g / 4.0).collect())
                    .collect(),
            ),
            Domain::ZeroOne => (
                (0..h).map(|l| 2.0 * self.nu[l] - 2.0 * row_sum(l)).collect(),
                self.gamma
                    .iter()
                    .map(|r| r.iter().map(|g| g * 4.0).collect())
                    .collect(),
            ),
        };
        IsingModel::new(nu, gamma, target).expect("conversion preserves symmetry")
    }

    pub fn sampler(&self) -> Result<IsingSampler> {
        let probs = self.state_probabilities()?;
        let mut acc = 0.0;
        let mut states = Vec::with_capacity(probs.len());
        let mut cumulative = Vec::with_capacity(probs.len());
        for (s, p) in probs {
            acc += p;
            states.push(s);
            cumulative.push(acc);
        }
        Ok(IsingSampler { states, cumulative })
    }

    /// Exact draws by categorical sampling over the enumerated states.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Vec<i8>>> {
        let s = self.sampler()?;
        Ok((0..n).map(|_| s.draw(rng).to_vec()).collect())
    }
}

#[derive(Debug, Clone)]
pub struct IsingSampler {
    states: Vec<Vec<i8>>,
    cumulative: Vec<f64>,
}

impl IsingSampler {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> &[i8] {
        let total = *self.cumulative.last().expect("at least one state");
        let u = rng.random::<f64>() * total;
        let idx = self.cumulative.partition_point(|&c| c <= u);
        &self.states[idx.min(self.states.len() - 1)]
    }
}

fn softplus(a: f64) -> f64 {
    if a > 0.0 {
        a + (-a).exp().ln_1p()
    } else {
        a.exp().ln_1p()
    }
}

fn log_2cosh(a: f64) -> f64 {
    let b = a.abs();
    b + (-2.0 * b).exp().ln_1p()
}

fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// Distinct rows with summed weights; zero-weight rows are dropped.
pub fn aggregate_rows<R: AsRef<[i8]>>(rows: &[R], weights: &[f64]) -> Vec<(Vec<i8>, f64)> {
    let mut map: BTreeMap<Vec<i8>, f64> = BTreeMap::new();
    for (r, &w) in rows.iter().zip(weights) {
        if w > 0.0 {
            *map.entry(r.as_ref().to_vec()).or_insert(0.0) += w;
        }
    }
    map.into_iter().collect()
}

/// Weighted pseudo-log-likelihood and its gradient in the packed
/// parameter layout of [`IsingModel::params`].
pub fn pseudo_loglik_and_gradient(
    patterns: &[(Vec<i8>, f64)],
    params: &[f64],
    h: usize,
    domain: Domain,
    grad: &mut [f64],
) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let nu = &params[..h];
    let pairs = &params[h..];
    let gamma = |l: usize, k: usize| -> f64 {
        if l < k {
            pairs[pair_index(h, l, k)]
        } else {
            pairs[pair_index(h, k, l)]
        }
    };
    let mut total = 0.0;
    let mut resid = vec![0.0; h];
    for (d, w) in patterns {
        for l in 0..h {
            let mut a = nu[l];
            for k in 0..h {
                if k != l {
                    a += gamma(l, k) * d[k] as f64;
                }
            }
            let dl = d[l] as f64;
            let (ll, r) = match domain {
                Domain::ZeroOne => (dl * a - softplus(a), dl - sigmoid(a)),
                Domain::PlusMinusOne => (dl * a - log_2cosh(a), dl - a.tanh()),
            };
            total += w * ll;
            resid[l] = r;
            grad[l] += w * r;
        }
        for l in 0..h {
            for k in l + 1..h {
                grad[h + pair_index(h, l, k)] +=
                    w * (resid[l] * d[k] as f64 + resid[k] * d[l] as f64);
            }
        }
    }
    total
}

/// `sum_rows weight * sum_l log P(d_l | rest)`.
pub fn pseudo_loglik<R: AsRef<[i8]>>(rows: &[R], weights: &[f64], m: &IsingModel) -> f64 {
    rows.iter()
        .zip(weights)
        .filter(|(_, &w)| w != 0.0)
        .map(|(r, &w)| {
            let d = r.as_ref();
            w * (0..m.h()).map(|l| m.log_conditional(d, l)).sum::<f64>()
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsingFit {
    pub model: IsingModel,
    /// Variables constant in the weighted rows; their interactions are 0 and
    /// their thresholds are clamped to +/- [`NU_CAP`].
    pub frozen: Vec<usize>,
    pub converged: bool,
    pub iterations: usize,
    pub pseudo_loglik: f64,
}

/// Maximizes the weighted pseudo-likelihood over thresholds and the upper
/// triangle of interactions.
pub fn fit_pseudo<R: AsRef<[i8]>>(
    rows: &[R],
    weights: &[f64],
    h: usize,
    domain: Domain,
    init: Option<&IsingModel>,
) -> Result<IsingFit> {
    if rows.len() != weights.len() {
        return Err(Error::LengthMismatch(rows.len(), weights.len()));
    }
    let patterns = aggregate_rows(rows, weights);
    for (d, _) in &patterns {
        if d.len() != h {
            return Err(Error::LengthMismatch(d.len(), h));
        }
        if let Some(&v) = d.iter().find(|&&v| !domain.contains(v)) {
            return Err(Error::DomainMismatch {
                value: v,
                domain: domain.label(),
            });
        }
    }
    let n_eff: f64 = patterns.iter().map(|(_, w)| w).sum();
    if n_eff < (h + 1) as f64 {
        return Err(Error::InvalidData(format!(
            "Ising fit needs at least {} weighted rows, got {n_eff}",
            h + 1
        )));
    }

    let n_par = h + h * h.saturating_sub(1) / 2;
    let mut lower = vec![-PARAM_CAP; n_par];
    let mut upper = vec![PARAM_CAP; n_par];
    let mut x0 = match init {
        Some(m) if m.h() == h => m.convert_domain(domain).params(),
        _ => vec![0.0; n_par],
    };
    for v in x0.iter_mut() {
        *v = v.clamp(-PARAM_CAP, PARAM_CAP);
    }

    let mut frozen = Vec::new();
    for l in 0..h {
        let first = patterns[0].0[l];
        if patterns.iter().all(|(d, _)| d[l] == first) {
            frozen.push(l);
            let nu = if first == domain.high() { NU_CAP } else { -NU_CAP };
            lower[l] = nu;
            upper[l] = nu;
            x0[l] = nu;
            for k in 0..h {
                if k != l {
                    let idx = h + pair_index(h, l.min(k), l.max(k));
                    lower[idx] = 0.0;
                    upper[idx] = 0.0;
                    x0[idx] = 0.0;
                }
            }
        }
    }
    if !frozen.is_empty() {
        log::debug!("Ising fit: constant variables {frozen:?} frozen");
    }

    let opts = BfgsOptions {
        max_iter: 500,
        grad_tol: 1e-6,
        lower: Some(lower),
        upper: Some(upper),
    };
    let min = optim::minimize(
        |x, g| {
            let v = pseudo_loglik_and_gradient(&patterns, x, h, domain, g);
            g.iter_mut().for_each(|gi| *gi = -*gi);
            -v
        },
        &x0,
        &opts,
    );
    let model = IsingModel::from_params(h, &min.x, domain)?;
    Ok(IsingFit {
        model,
        frozen,
        converged: min.converged,
        iterations: min.iterations,
        pseudo_loglik: -min.value,
    })
}

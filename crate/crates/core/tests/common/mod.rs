#![allow(dead_code)]

use mlcwm::em;
use mlcwm::optim::{self, BfgsOptions};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Gauss-Hermite rule by Newton iteration on the orthonormal Hermite
/// recurrence (independent of the library's eigenvalue construction).
pub fn hermite_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-0.16667),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

fn log_bern(y: u8, eta: f64) -> f64 {
    let sp = |a: f64| if a > 0.0 { a + (-a).exp().ln_1p() } else { a.exp().ln_1p() };
    if y == 1 { -sp(-eta) } else { -sp(eta) }
}

/// `log int prod_i p(y_i | eta_i + b) N(b; 0, sigma^2) db` by adaptive
/// Gauss-Hermite quadrature centered at `center` with scale `scale`.
pub fn quadrature_marginal(eta: &[f64], y: &[u8], sigma: f64, center: f64, scale: f64, nodes: usize) -> f64 {
    let (t, w) = hermite_rule(nodes);
    let terms: Vec<f64> = t
        .iter()
        .zip(&w)
        .map(|(&tk, &wk)| {
            let b = center + std::f64::consts::SQRT_2 * scale * tk;
            let ll: f64 = eta.iter().zip(y).map(|(&e, &yi)| log_bern(yi, e + b)).sum();
            let prior = -0.5 * (b / sigma).powi(2) - (sigma * (2.0 * std::f64::consts::PI).sqrt()).ln();
            wk.ln() + tk * tk + ll + prior + (std::f64::consts::SQRT_2 * scale).ln()
        })
        .collect();
    let mx = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    mx + terms.iter().map(|v| (v - mx).exp()).sum::<f64>().ln()
}

/// One-group logistic data with a shared intercept shift.
pub fn single_group(n: usize, beta: &[f64], b: f64, seed: u64) -> (DMatrix<f64>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = Normal::new(0.0, 1.0).unwrap();
    let m = beta.len();
    let x = DMatrix::from_fn(n, m, |_, a| if a == 0 { 1.0 } else { std.sample(&mut rng) });
    let y = (0..n)
        .map(|i| {
            let eta: f64 = (0..m).map(|a| x[(i, a)] * beta[a]).sum::<f64>() + b;
            u8::from(rng.random::<f64>() < 1.0 / (1.0 + (-eta).exp()))
        })
        .collect();
    (x, y)
}

fn fd_minimize(f: impl Fn(&[f64]) -> f64, x0: &[f64]) -> Vec<f64> {
    let opts = BfgsOptions {
        max_iter: 5000,
        grad_tol: 1e-9,
        ..Default::default()
    };
    optim::minimize(
        |x, g| {
            let mut xp = x.to_vec();
            for k in 0..x.len() {
                let h = 1e-6 * (1.0 + x[k].abs());
                xp[k] = x[k] + h;
                let fp = f(&xp);
                xp[k] = x[k] - h;
                let fm = f(&xp);
                xp[k] = x[k];
                g[k] = (fp - fm) / (2.0 * h);
            }
            f(x)
        },
        x0,
        &opts,
    )
    .x
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut p: Vec<f64> = std::iter::once(0.0).chain(logits.iter().copied()).map(f64::exp).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

/// Compares the closed-form Gaussian, multinomial and mixing-weight updates
/// with a generic quasi-Newton maximizer of the same objective on one random
/// 30-row instance; returns the largest absolute parameter difference.
pub fn closed_form_gap(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = Normal::new(0.0, 1.0).unwrap();
    let n = 30;
    let c = 3;
    let z: Vec<usize> = (0..n).map(|i| if i < c * 5 { i % c } else { rng.random_range(0..c) }).collect();
    let u: Vec<Vec<f64>> = (0..n)
        .map(|_| vec![1.0 + 2.0 * std.sample(&mut rng), -0.5 + std.sample(&mut rng)])
        .collect();
    let v: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
    let mut gap = 0.0f64;

    for k in 0..c {
        let idx: Vec<usize> = (0..n).filter(|&i| z[i] == k).collect();
        let rows: Vec<Vec<f64>> = idx.iter().map(|&i| u[i].clone()).collect();
        let (mu, sigma) = em::weighted_mean_cov(&rows, &vec![1.0; rows.len()]);
        let neg_q = |p: &[f64]| {
            let (l11, l21, l22) = (p[2].exp(), p[3], p[4].exp());
            let s = DMatrix::from_row_slice(2, 2, &[l11 * l11, l11 * l21, l11 * l21, l21 * l21 + l22 * l22]);
            rows.iter()
                .map(|r| -mlcwm::dists::mvn_logpdf(r, &p[..2], &s).unwrap())
                .sum::<f64>()
        };
        let p = fd_minimize(neg_q, &[0.0, 0.0, 0.0, 0.0, 0.0]);
        let (l11, l21, l22) = (p[2].exp(), p[3], p[4].exp());
        let num = [p[0], p[1], l11 * l11, l11 * l21, l21 * l21 + l22 * l22];
        let closed = [mu[0], mu[1], sigma[(0, 0)], sigma[(1, 0)], sigma[(1, 1)]];
        for (a, b) in num.iter().zip(&closed) {
            gap = gap.max((a - b).abs());
        }

        let codes: Vec<usize> = idx.iter().map(|&i| v[i]).collect();
        let lambda = em::category_frequencies(&codes, 3, &vec![1.0; codes.len()], 0.0);
        let neg_q = |p: &[f64]| {
            let pr = softmax(p);
            -codes.iter().map(|&s| pr[s].ln()).sum::<f64>()
        };
        let pr = softmax(&fd_minimize(neg_q, &[0.0, 0.0]));
        for (a, b) in pr.iter().zip(&lambda) {
            gap = gap.max((a - b).abs());
        }
    }

    let w = em::mixing_weights(&z, c);
    let neg_q = |p: &[f64]| {
        let pr = softmax(p);
        -z.iter().map(|&k| pr[k].ln()).sum::<f64>()
    };
    let pr = softmax(&fd_minimize(neg_q, &[0.0, 0.0]));
    for (a, b) in pr.iter().zip(&w) {
        gap = gap.max((a - b).abs());
    }
    gap
}

/// Largest |Laplace - quadrature| over five one-group, 50-row instances
/// with the intercept SD held at known values.
pub fn laplace_quadrature_gaps() -> Vec<f64> {
    use mlcwm::glmm::{fit_logistic_mixed, MixedOptions};
    let sigmas = [0.5, 1.0, 1.5, 2.0, 2.5];
    sigmas
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let (x, y) = single_group(50, &[-0.3, 0.9], 0.7 * s, 100 + k as u64);
            let opts = MixedOptions {
                fixed_sigma: Some(s),
                grad_tol: 1e-9,
                ..Default::default()
            };
            let fit = fit_logistic_mixed(&x, &vec![0; 50], 1, &y, &vec![1.0; 50], &opts).unwrap();
            let eta: Vec<f64> = (0..50).map(|i| x[(i, 0)] * fit.beta[0] + x[(i, 1)] * fit.beta[1]).collect();
            let quad = quadrature_marginal(&eta, &y, s, fit.b[0], fit.b_sd[0], 64);
            (fit.loglik - quad).abs()
        })
        .collect()
}

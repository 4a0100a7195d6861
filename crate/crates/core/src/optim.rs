//! Box-constrained quasi-Newton minimizer (BFGS on the free variables with
//! projection onto the box and Armijo backtracking).

#[derive(Debug, Clone)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when the max-abs projected gradient falls below this.
    pub grad_tol: f64,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            grad_tol: 1e-6,
            lower: None,
            upper: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn project(x: &mut [f64], opts: &BfgsOptions) {
    if let Some(lo) = &opts.lower {
        for (xi, &l) in x.iter_mut().zip(lo) {
            if *xi < l {
                *xi = l;
            }
        }
    }
    if let Some(hi) = &opts.upper {
        for (xi, &h) in x.iter_mut().zip(hi) {
            if *xi > h {
                *xi = h;
            }
        }
    }
}

/// Components whose descent direction would leave the box.
fn blocked(x: &[f64], g: &[f64], opts: &BfgsOptions) -> Vec<bool> {
    (0..x.len())
        .map(|i| {
            let at_lo = opts.lower.as_ref().is_some_and(|lo| x[i] <= lo[i] && g[i] > 0.0);
            let at_hi = opts.upper.as_ref().is_some_and(|hi| x[i] >= hi[i] && g[i] < 0.0);
            at_lo || at_hi
        })
        .collect()
}

fn projected_norm(g: &[f64], blocked: &[bool]) -> f64 {
    g.iter()
        .zip(blocked)
        .filter(|(_, &b)| !b)
        .fold(0.0, |m, (gi, _)| m.max(gi.abs()))
}

/// Minimizes `f`, which returns the objective and writes its gradient.
pub fn minimize<F>(mut f: F, x0: &[f64], opts: &BfgsOptions) -> Minimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, opts);
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let mut h = identity(n);
    let mut fresh = true;
    let mut iterations = 0;
    let mut converged = false;
    let mut stalls = 0;

    while iterations < opts.max_iter {
        let blk = blocked(&x, &g, opts);
        if projected_norm(&g, &blk) <= opts.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut d = vec![0.0; n];
        for i in 0..n {
            if blk[i] {
                continue;
            }
            let mut s = 0.0;
            for j in 0..n {
                if !blk[j] {
                    s -= h[i * n + j] * g[j];
                }
            }
            d[i] = s;
        }
        let mut slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            h = identity(n);
            fresh = true;
            for i in 0..n {
                d[i] = if blk[i] { 0.0 } else { -g[i] };
            }
            slope = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        }

        let mut step = if fresh {
            let dn = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            (1.0 / dn.max(1e-12)).min(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        let mut g_new = vec![0.0; n];
        for _ in 0..60 {
            let mut xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            project(&mut xn, opts);
            let fnew = f(&xn, &mut g_new);
            let decrease: f64 = g.iter().zip(xn.iter().zip(&x)).map(|(gi, (a, b))| gi * (a - b)).sum();
            if fnew.is_finite() && fnew <= fx + 1e-4 * decrease {
                accepted = Some((xn, fnew));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            if fresh {
                break;
            }
            h = identity(n);
            fresh = true;
            continue;
        };

        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
        if sy > 1e-12 {
            if fresh {
                // Scale the initial inverse Hessian by the observed curvature.
                let yy: f64 = yv.iter().map(|v| v * v).sum();
                let scale = sy / yy;
                for i in 0..n {
                    h[i * n + i] = scale;
                }
            }
            bfgs_update(&mut h, &s, &yv, sy);
            fresh = false;
        }

        if (fx - fnew).abs() <= 1e-15 * (1.0 + fx.abs()) {
            stalls += 1;
        } else {
            stalls = 0;
        }
        x = xn;
        fx = fnew;
        g.copy_from_slice(&g_new);
        if stalls >= 3 {
            break;
        }
    }

    let blk = blocked(&x, &g, opts);
    let grad_norm = projected_norm(&g, &blk);
    Minimum {
        x,
        value: fx,
        grad: g,
        grad_norm,
        iterations,
        converged: converged || grad_norm <= opts.grad_tol,
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum())
        .collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

/// Central-difference Hessian of a function given through its gradient.
pub fn hessian_from_gradient<F>(mut grad: F, x: &[f64], step: f64) -> Vec<Vec<f64>>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let n = x.len();
    let mut hess = vec![vec![0.0; n]; n];
    let mut gp = vec![0.0; n];
    let mut gm = vec![0.0; n];
    let mut xp = x.to_vec();
    for j in 0..n {
        let hj = step * (1.0 + x[j].abs());
        xp[j] = x[j] + hj;
        grad(&xp, &mut gp);
        xp[j] = x[j] - hj;
        grad(&xp, &mut gm);
        xp[j] = x[j];
        for i in 0..n {
            hess[i][j] = (gp[i] - gm[i]) / (2.0 * hj);
        }
    }
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (hess[i][j] + hess[j][i]);
            hess[i][j] = avg;
            hess[j][i] = avg;
        }
    }
    hess
}

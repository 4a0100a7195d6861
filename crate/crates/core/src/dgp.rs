//! Synthetic two-level data from a known mixture.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{build_design, BinaryColumn, CategoricalColumn, Dataset, NumericColumn};
use crate::dists::{Domain, IsingModel};
use crate::error::{Error, Result};
use crate::glmm::sigmoid;

/// True parameters of one component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterTruth {
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    /// One probability vector per categorical column.
    pub lambda: Vec<Vec<f64>>,
    /// Ising thresholds and packed upper-triangle interactions, stated in
    /// the `{0,1}` domain.
    pub nu: Vec<f64>,
    pub gamma_pairs: Vec<f64>,
    /// Success probability of each fixed-only binary covariate.
    pub fixed_only_p: Vec<f64>,
    pub beta: Vec<f64>,
    pub sigma_b: f64,
}

impl ClusterTruth {
    pub fn ising(&self, domain: Domain) -> Result<IsingModel> {
        let m = IsingModel::from_pairs(self.nu.clone(), &self.gamma_pairs, Domain::ZeroOne)?;
        Ok(if domain == Domain::ZeroOne {
            m
        } else {
            m.convert_domain(domain)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub w: Vec<f64>,
    pub clusters: Vec<ClusterTruth>,
    pub n_groups: usize,
    pub n_per_group: usize,
    pub domain: Domain,
    pub response: String,
    pub group: String,
    pub continuous: Vec<String>,
    pub categorical: Vec<(String, Vec<String>)>,
    pub dichotomous: Vec<String>,
    pub fixed_only: Vec<String>,
    /// Terms of the linear predictor, in the order of `beta`.
    pub formula: Vec<String>,
}

fn m2(a: f64, b: f64, c: f64) -> Vec<Vec<f64>> {
    vec![vec![a, b], vec![b, c]]
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

/// The three-component simulation design: two Gaussian covariates, a
/// two-level and a three-level categorical, three dependent binary covariates
/// and a random intercept with variance 4; 10 groups of 200.
pub fn builtin_table1() -> GroundTruth {
    let cluster = |mu: [f64; 2], s: [f64; 3], a1: [f64; 2], a2: [f64; 3], nu: [f64; 3], g: [f64; 3], beta: [f64; 8]| ClusterTruth {
        mu: mu.to_vec(),
        sigma: m2(s[0], s[1], s[2]),
        lambda: vec![a1.to_vec(), a2.to_vec()],
        nu: nu.to_vec(),
        gamma_pairs: g.to_vec(),
        fixed_only_p: Vec::new(),
        beta: beta.to_vec(),
        sigma_b: 2.0,
    };
    GroundTruth {
        w: vec![0.2, 0.3, 0.5],
        clusters: vec![
            cluster(
                [2.05, 0.13],
                [0.7, 0.5, 3.0],
                [0.51, 0.49],
                [0.75, 0.18, 0.07],
                [0.11, 0.38, -0.49],
                [0.21, -1.1, 0.0],
                [-0.52, 0.08, 1.31, 0.22, 5.33, 2.75, 2.29, 0.93],
            ),
            cluster(
                [5.06, 4.84],
                [2.0, -1.0, 3.0],
                [0.49, 0.51],
                [0.07, 0.75, 0.18],
                [-0.15, 0.88, -0.18],
                [-0.73, 0.83, 0.0],
                [-0.07, 0.79, -0.46, 0.25, -3.89, -0.63, 0.63, -1.51],
            ),
            cluster(
                [4.22, -4.51],
                [3.0, 1.0, 2.0],
                [0.47, 0.53],
                [0.30, 0.51, 0.19],
                [0.73, -0.23, 0.01],
                [-4.15, 2.11, 1.14],
                [-0.42, -0.31, -1.33, -0.60, -4.18, 4.89, 3.34, -0.46],
            ),
        ],
        n_groups: 10,
        n_per_group: 200,
        domain: Domain::ZeroOne,
        response: "y".into(),
        group: "group".into(),
        continuous: strings(&["u1", "u2"]),
        categorical: vec![
            ("a1".into(), strings(&["1", "2"])),
            ("a2".into(), strings(&["1", "2", "3"])),
        ],
        dichotomous: strings(&["d1", "d2", "d3"]),
        fixed_only: Vec::new(),
        formula: strings(&["u1", "u2", "a1", "a2", "d1", "d2", "d3"]),
    }
}

/// A hospital-style design: age and a mental-health score as Gaussian
/// covariates, gender and two comorbidities as dependent binary covariates,
/// and a regression on an intercept plus two fixed-only binary risk factors
/// (`pna`, `rf`); 32 groups of 60.
pub fn builtin_application_analogue() -> GroundTruth {
    let cluster = |mu: [f64; 2], s: [f64; 3], nu: [f64; 3], g: [f64; 3], p: [f64; 2], beta: [f64; 3], sb: f64| ClusterTruth {
        mu: mu.to_vec(),
        sigma: m2(s[0], s[1], s[2]),
        lambda: Vec::new(),
        nu: nu.to_vec(),
        gamma_pairs: g.to_vec(),
        fixed_only_p: p.to_vec(),
        beta: beta.to_vec(),
        sigma_b: sb,
    };
    GroundTruth {
        w: vec![0.3, 0.45, 0.25],
        clusters: vec![
            cluster([80.0, 38.0], [40.0, -8.0, 60.0], [0.2, -1.0, -0.6], [0.8, 0.3, 1.2], [0.3, 0.25], [-2.6, 1.3, 1.0], 0.5),
            cluster([70.0, 50.0], [60.0, -5.0, 50.0], [-0.3, -2.0, -1.5], [0.5, 0.2, 1.5], [0.1, 0.08], [-3.2, 0.4, 0.3], 0.4),
            cluster([86.0, 30.0], [25.0, -4.0, 70.0], [0.4, 0.0, 0.5], [0.2, 0.6, 0.9], [0.45, 0.4], [-1.2, 1.6, 1.2], 0.6),
        ],
        n_groups: 32,
        n_per_group: 60,
        domain: Domain::ZeroOne,
        response: "died".into(),
        group: "hospital".into(),
        continuous: strings(&["age", "mcs"]),
        categorical: Vec::new(),
        dichotomous: strings(&["gender", "copd", "brh"]),
        fixed_only: strings(&["pna", "rf"]),
        formula: strings(&["1", "pna", "rf"]),
    }
}

impl GroundTruth {
    pub fn validate(&self) -> Result<()> {
        let c = self.clusters.len();
        let bad = |m: String| Err(Error::InvalidData(m));
        if c == 0 || self.w.len() != c {
            return bad(format!("{} weights for {c} clusters", self.w.len()));
        }
        if (self.w.iter().sum::<f64>() - 1.0).abs() > 1e-9 || self.w.iter().any(|&w| !(w > 0.0)) {
            return bad("mixture weights must be positive and sum to 1".into());
        }
        if self.n_groups == 0 || self.n_per_group == 0 {
            return bad("need at least one group and one row per group".into());
        }
        let p = self.continuous.len();
        let h = self.dichotomous.len();
        for (k, cl) in self.clusters.iter().enumerate() {
            if cl.mu.len() != p || cl.sigma.len() != p || cl.sigma.iter().any(|r| r.len() != p) {
                return bad(format!("cluster {}: continuous block has wrong size", k + 1));
            }
            let s = DMatrix::from_fn(p, p, |i, j| cl.sigma[i][j]);
            if p > 0 && (s.clone().cholesky().is_none() || (&s - s.transpose()).amax() > 1e-12) {
                return bad(format!("cluster {}: covariance is not symmetric positive definite", k + 1));
            }
            if cl.lambda.len() != self.categorical.len() {
                return bad(format!("cluster {}: wrong number of categorical blocks", k + 1));
            }
            for (lam, (name, levels)) in cl.lambda.iter().zip(&self.categorical) {
                if lam.len() != levels.len() || (lam.iter().sum::<f64>() - 1.0).abs() > 1e-9 || lam.iter().any(|&v| v < 0.0) {
                    return bad(format!("cluster {}: probabilities for `{name}` are invalid", k + 1));
                }
            }
            if cl.nu.len() != h || cl.gamma_pairs.len() != h * h.saturating_sub(1) / 2 {
                return bad(format!("cluster {}: Ising block has wrong size", k + 1));
            }
            if cl.fixed_only_p.len() != self.fixed_only.len() || cl.fixed_only_p.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return bad(format!("cluster {}: fixed-only probabilities are invalid", k + 1));
            }
            if !(cl.sigma_b >= 0.0) {
                return bad(format!("cluster {}: sigma_b must be non-negative", k + 1));
            }
        }
        Ok(())
    }

    pub fn n_obs(&self) -> usize {
        self.n_groups * self.n_per_group
    }

    fn group_labels(&self) -> Vec<String> {
        let width = self.n_groups.to_string().len();
        (1..=self.n_groups).map(|j| format!("g{j:0width$}")).collect()
    }
}

/// A generated dataset together with the hidden structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simulated {
    #[serde(skip)]
    pub dataset: Option<Dataset>,
    /// 0-based true cluster of each row.
    pub labels: Vec<usize>,
    /// `intercepts[j][c]`: realized random intercept of group `j` in cluster `c`.
    pub intercepts: Vec<Vec<f64>>,
}

impl Simulated {
    pub fn dataset(&self) -> &Dataset {
        self.dataset.as_ref().expect("generated dataset present")
    }
}

/// RNG for the training draw of replicate `seed`.
pub fn train_rng(seed: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(0);
    r
}

/// RNG for the test draw of replicate `seed`, disjoint from [`train_rng`].
pub fn test_rng(seed: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(1);
    r
}

fn draw_categorical<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &pk) in p.iter().enumerate() {
        acc += pk;
        if u < acc {
            return k;
        }
    }
    p.len() - 1
}

fn draw_intercepts<R: Rng + ?Sized>(gt: &GroundTruth, rng: &mut R) -> Vec<Vec<f64>> {
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    (0..gt.n_groups)
        .map(|_| gt.clusters.iter().map(|c| c.sigma_b * std.sample(rng)).collect())
        .collect()
}

/// Draws covariates and responses for rows with given groups and labels.
fn realize<R: Rng + ?Sized>(
    gt: &GroundTruth,
    groups: Vec<usize>,
    labels: &[usize],
    intercepts: &[Vec<f64>],
    rng: &mut R,
) -> Result<Dataset> {
    let n = groups.len();
    let p = gt.continuous.len();
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let chols: Vec<DMatrix<f64>> = gt
        .clusters
        .iter()
        .map(|c| {
            let s = DMatrix::from_fn(p, p, |i, j| c.sigma[i][j]);
            s.cholesky().map(|ch| ch.l()).unwrap_or_else(|| DMatrix::zeros(p, p))
        })
        .collect();
    let samplers = gt
        .clusters
        .iter()
        .map(|c| c.ising(gt.domain)?.sampler())
        .collect::<Result<Vec<_>>>()?;

    let mut u = vec![vec![0.0; n]; p];
    let mut v = vec![vec![0usize; n]; gt.categorical.len()];
    let mut d = vec![vec![0i8; n]; gt.dichotomous.len()];
    let mut f = vec![vec![0.0; n]; gt.fixed_only.len()];
    for i in 0..n {
        let c = labels[i];
        let cl = &gt.clusters[c];
        let e: Vec<f64> = (0..p).map(|_| std.sample(rng)).collect();
        for a in 0..p {
            u[a][i] = cl.mu[a] + (0..=a).map(|b| chols[c][(a, b)] * e[b]).sum::<f64>();
        }
        for (r, lam) in cl.lambda.iter().enumerate() {
            v[r][i] = draw_categorical(lam, rng);
        }
        let state = samplers[c].draw(rng);
        for (l, &s) in state.iter().enumerate() {
            d[l][i] = s;
        }
        for (k, &pk) in cl.fixed_only_p.iter().enumerate() {
            f[k][i] = if rng.random::<f64>() < pk { 1.0 } else { 0.0 };
        }
    }

    let mut ds = Dataset {
        response_name: gt.response.clone(),
        has_response: true,
        y: vec![0; n],
        group_name: gt.group.clone(),
        group_labels: gt.group_labels(),
        groups,
        continuous: gt
            .continuous
            .iter()
            .zip(u)
            .map(|(name, values)| NumericColumn { name: name.clone(), values })
            .collect(),
        categorical: gt
            .categorical
            .iter()
            .zip(v)
            .map(|((name, levels), codes)| CategoricalColumn {
                name: name.clone(),
                levels: levels.clone(),
                codes,
            })
            .collect(),
        dichotomous: gt
            .dichotomous
            .iter()
            .zip(d)
            .map(|(name, values)| BinaryColumn { name: name.clone(), values })
            .collect(),
        fixed_only: gt
            .fixed_only
            .iter()
            .zip(f)
            .map(|(name, values)| NumericColumn { name: name.clone(), values })
            .collect(),
        domain: gt.domain,
    };
    let design = build_design(&ds, &gt.formula)?;
    for i in 0..n {
        let c = labels[i];
        let beta = &gt.clusters[c].beta;
        if beta.len() != design.n_cols() {
            return Err(Error::LengthMismatch(beta.len(), design.n_cols()));
        }
        let eta: f64 = (0..beta.len()).map(|k| design.x[(i, k)] * beta[k]).sum::<f64>()
            + intercepts[ds.groups[i]][c];
        ds.y[i] = u8::from(rng.random::<f64>() < sigmoid(eta));
    }
    Ok(ds)
}

/// Generates `n_groups * n_per_group` rows. Each group's labels are redrawn
/// (up to 100 times) until every cluster is represented in it.
pub fn generate<R: Rng + ?Sized>(gt: &GroundTruth, rng: &mut R) -> Result<Simulated> {
    gt.validate()?;
    let c = gt.clusters.len();
    let mut labels = Vec::with_capacity(gt.n_obs());
    let mut groups = Vec::with_capacity(gt.n_obs());
    for j in 0..gt.n_groups {
        let mut ok = false;
        for _ in 0..100 {
            let draw: Vec<usize> = (0..gt.n_per_group).map(|_| draw_categorical(&gt.w, rng)).collect();
            let mut seen = vec![false; c];
            draw.iter().for_each(|&k| seen[k] = true);
            if seen.iter().all(|&s| s) {
                labels.extend(draw);
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(Error::InvalidData(format!(
                "group {} could not be stratified across {c} clusters in 100 attempts",
                j + 1
            )));
        }
        groups.extend(std::iter::repeat_n(j, gt.n_per_group));
    }
    let intercepts = draw_intercepts(gt, rng);
    let ds = realize(gt, groups, &labels, &intercepts, rng)?;
    Ok(Simulated {
        dataset: Some(ds),
        labels,
        intercepts,
    })
}

/// Test rows from the same groups with freshly drawn random intercepts.
pub fn generate_test_split<R: Rng + ?Sized>(gt: &GroundTruth, n_test: usize, rng: &mut R) -> Result<Simulated> {
    gt.validate()?;
    let labels: Vec<usize> = (0..n_test).map(|_| draw_categorical(&gt.w, rng)).collect();
    let groups: Vec<usize> = (0..n_test).map(|_| rng.random_range(0..gt.n_groups)).collect();
    let intercepts = draw_intercepts(gt, rng);
    let ds = realize(gt, groups, &labels, &intercepts, rng)?;
    Ok(Simulated {
        dataset: Some(ds),
        labels,
        intercepts,
    })
}

/// Train and test draws of replicate `seed` on disjoint streams.
pub fn simulate_pair(gt: &GroundTruth, n_test: usize, seed: u64) -> Result<(Simulated, Simulated)> {
    let train = generate(gt, &mut train_rng(seed))?;
    let test = generate_test_split(gt, n_test, &mut test_rng(seed))?;
    Ok((train, test))
}

/// Sidecar written next to simulated CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSidecar {
    pub seed: u64,
    pub truth: GroundTruth,
    pub train_labels: Vec<usize>,
    pub train_intercepts: Vec<Vec<f64>>,
    pub test_labels: Vec<usize>,
    pub test_intercepts: Vec<Vec<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table1_constants() {
        let gt = builtin_table1();
        gt.validate().unwrap();
        assert_eq!(gt.w, vec![0.2, 0.3, 0.5]);
        assert_eq!(gt.clusters[2].gamma_pairs, vec![-4.15, 2.11, 1.14]);
        assert_eq!(gt.clusters[1].beta, vec![-0.07, 0.79, -0.46, 0.25, -3.89, -0.63, 0.63, -1.51]);
        assert_eq!(gt.n_obs(), 2000);
    }

    #[test]
    fn design_matches_coefficient_length() {
        let gt = builtin_table1();
        let sim = generate(&gt, &mut train_rng(1)).unwrap();
        let d = build_design(sim.dataset(), &gt.formula).unwrap();
        assert_eq!(d.names, vec!["u1", "u2", "a1:2", "a2:2", "a2:3", "d1", "d2", "d3"]);
    }

    #[test]
    fn shares_and_means() {
        let gt = builtin_table1();
        let sim = generate(&gt, &mut train_rng(5)).unwrap();
        let ds = sim.dataset();
        for c in 0..3 {
            let idx: Vec<usize> = (0..ds.n_obs()).filter(|&i| sim.labels[i] == c).collect();
            let share = idx.len() as f64 / ds.n_obs() as f64;
            assert!((share - gt.w[c]).abs() <= 0.03, "cluster {c} share {share}");
            for a in 0..2 {
                let mean = idx.iter().map(|&i| ds.continuous[a].values[i]).sum::<f64>() / idx.len() as f64;
                let tol = 3.0 * (gt.clusters[c].sigma[a][a] / idx.len() as f64).sqrt();
                assert!((mean - gt.clusters[c].mu[a]).abs() <= tol, "cluster {c} coord {a}: {mean}");
            }
        }
        for j in 0..gt.n_groups {
            for c in 0..3 {
                assert!((0..ds.n_obs()).any(|i| ds.groups[i] == j && sim.labels[i] == c));
            }
        }
    }

    #[test]
    fn deterministic_and_disjoint() {
        let gt = builtin_table1();
        let a = simulate_pair(&gt, 200, 9).unwrap();
        let b = simulate_pair(&gt, 200, 9).unwrap();
        assert_eq!(a.0.dataset, b.0.dataset);
        assert_eq!(a.1.dataset, b.1.dataset);
        assert_eq!(a.1.dataset().n_obs(), 200);
        assert_ne!(a.0.intercepts[0], a.1.intercepts[0]);
    }

    #[test]
    fn independent_binary_block_is_balanced() {
        let mut gt = builtin_table1();
        for c in &mut gt.clusters {
            c.nu = vec![0.0; 3];
            c.gamma_pairs = vec![0.0; 3];
        }
        let sim = generate(&gt, &mut train_rng(2)).unwrap();
        let ds = sim.dataset();
        let n = ds.n_obs() as f64;
        for col in &ds.dichotomous {
            let mean = col.values.iter().map(|&v| v as f64).sum::<f64>() / n;
            assert!((mean - 0.5).abs() <= 3.0 * (0.25 / n).sqrt());
        }
    }

    #[test]
    fn analogue_generates() {
        let gt = builtin_application_analogue();
        let sim = generate(&gt, &mut train_rng(3)).unwrap();
        let ds = sim.dataset();
        assert_eq!(ds.n_groups(), 32);
        assert_eq!(ds.fixed_only.len(), 2);
        assert!(crate::data::validate(ds).is_empty());
    }

    #[test]
    fn rejects_bad_weights() {
        let mut gt = builtin_table1();
        gt.w = vec![0.5, 0.5, 0.5];
        assert!(generate(&gt, &mut train_rng(1)).is_err());
    }
}

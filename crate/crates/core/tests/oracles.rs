mod common;

use mlcwm::data::{load_dataset, validate};
use mlcwm::dgp::{self, builtin_table1};
use mlcwm::glmm::{fit_logistic_glm, fit_logistic_mixed, MixedOptions};
use rand::{Rng, SeedableRng};

#[test]
fn hermite_rule_integrates_gaussian_moments() {
    let (x, w) = common::hermite_rule(64);
    let m0: f64 = w.iter().sum();
    let m4: f64 = x.iter().zip(&w).map(|(t, v)| t.powi(4) * v).sum();
    let sp = std::f64::consts::PI.sqrt();
    assert!((m0 - sp).abs() < 1e-12);
    assert!((m4 - 0.75 * sp).abs() < 1e-10);
}

#[test]
fn laplace_close_to_quadrature() {
    for (k, gap) in common::laplace_quadrature_gaps().into_iter().enumerate() {
        assert!(gap < 1e-2, "instance {k}: gap {gap}");
    }
}

#[test]
fn closed_form_updates_match_numeric_maximizer() {
    for seed in 0..10 {
        let gap = common::closed_form_gap(seed);
        assert!(gap < 1e-4, "seed {seed}: gap {gap}");
    }
}

#[test]
fn zero_sigma_data_match_glm() {
    let mut gt = builtin_table1();
    gt.w = vec![1.0];
    gt.clusters = vec![gt.clusters[0].clone()];
    gt.clusters[0].sigma_b = 0.0;
    let sim = dgp::generate(&gt, &mut dgp::train_rng(12)).unwrap();
    let ds = sim.dataset();
    let x = mlcwm::data::build_design(ds, &gt.formula).unwrap().x;
    let w = vec![1.0; ds.n_obs()];
    let glm = fit_logistic_glm(&x, &ds.y, &w).unwrap();
    let mixed = fit_logistic_mixed(&x, &ds.groups, ds.n_groups(), &ds.y, &w, &MixedOptions::default()).unwrap();
    let se = glm.std_errors.unwrap();
    for k in 0..x.ncols() {
        assert!((glm.beta[k] - mixed.beta[k]).abs() <= 2.0 * se[k], "coef {k}");
    }
    assert!(mixed.sigma_b <= 0.3, "sigma_b {}", mixed.sigma_b);
}

/// With 10 groups the spread of the estimate is dominated by the sample SD
/// of the ten realized intercepts (2 * sqrt(chi2_10 / 10) has a 99.8% range
/// of about [0.77, 3.44]), so each fit is checked against that band and the
/// median against the truth.
#[test]
fn isolated_cluster_recovers_intercept_sd() {
    let mut gt = builtin_table1();
    gt.w = vec![1.0];
    gt.clusters = vec![gt.clusters[2].clone()];
    let mut est = Vec::new();
    for seed in 0..20 {
        let sim = dgp::generate(&gt, &mut dgp::train_rng(300 + seed)).unwrap();
        let ds = sim.dataset();
        let x = mlcwm::data::build_design(ds, &gt.formula).unwrap().x;
        let opts = MixedOptions {
            standard_errors: false,
            ..Default::default()
        };
        let fit = fit_logistic_mixed(&x, &ds.groups, ds.n_groups(), &ds.y, &vec![1.0; ds.n_obs()], &opts).unwrap();
        assert!((0.5..=3.5).contains(&fit.sigma_b), "seed {seed}: {}", fit.sigma_b);
        est.push(fit.sigma_b);
    }
    est.sort_by(f64::total_cmp);
    let median = 0.5 * (est[9] + est[10]);
    assert!((1.5..=2.5).contains(&median), "median {median}");
}

#[test]
fn generated_data_round_trip() {
    let sim = dgp::generate(&builtin_table1(), &mut dgp::train_rng(77)).unwrap();
    let ds = sim.dataset();
    assert!(validate(ds).is_empty());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.csv");
    ds.save_csv(&path).unwrap();
    let back = load_dataset(&path, &ds.manifest()).unwrap();
    assert_eq!(&back, ds);
}

#[test]
fn empty_group_is_reported() {
    let sim = dgp::generate(&builtin_table1(), &mut dgp::train_rng(78)).unwrap();
    let ds = sim.dataset();
    let keep: Vec<usize> = (0..ds.n_obs()).filter(|&i| ds.groups[i] != 3).collect();
    let sub = ds.subset(&keep);
    let violations = validate(&sub);
    let direct = (0..sub.n_groups()).filter(|&j| !sub.groups.contains(&j)).count();
    assert_eq!(direct, 1);
    assert_eq!(violations.len(), 1);
    assert!(violations[0].message.contains("empty group"));
}

fn appendix_model() -> mlcwm::dists::IsingModel {
    mlcwm::dists::IsingModel::from_pairs(vec![0.73, -0.23, 0.01], &[-4.15, 2.11, 1.14], mlcwm::dists::Domain::ZeroOne).unwrap()
}

/// Reference table in state order d1 d2 d3 = 000, 100, 010, 001, 110, 101, 011, 111.
const APPENDIX: [([i8; 3], f64); 8] = [
    ([0, 0, 0], 0.039),
    ([1, 0, 0], 0.082),
    ([0, 1, 0], 0.031),
    ([0, 0, 1], 0.039),
    ([1, 1, 0], 0.001),
    ([1, 0, 1], 0.682),
    ([0, 1, 1], 0.100),
    ([1, 1, 1], 0.026),
];

#[test]
fn sampler_frequencies_match_appendix_table() {
    let m = appendix_model();
    let draws = m.sample(1_000_000, &mut dgp::train_rng(5)).unwrap();
    for (state, p) in APPENDIX {
        let freq = draws.iter().filter(|d| d[..] == state[..]).count() as f64 / 1e6;
        assert!((freq - p).abs() <= 0.003, "{state:?}: {freq} vs {p}");
    }
}

#[test]
fn pseudo_likelihood_fit_is_consistent() {
    let m = appendix_model();
    let draws = m.sample(100_000, &mut dgp::train_rng(6)).unwrap();
    let fit = mlcwm::dists::ising::fit_pseudo(&draws, &vec![1.0; draws.len()], 3, m.domain(), None).unwrap();
    for (a, b) in fit.model.params().iter().zip(m.params()) {
        assert!((a - b).abs() <= 0.15, "{a} vs {b}");
    }
}

#[test]
fn pseudo_likelihood_peaks_at_its_maximizer() {
    let m = appendix_model();
    let draws = m.sample(5_000, &mut dgp::train_rng(7)).unwrap();
    let w = vec![1.0; draws.len()];
    let fit = mlcwm::dists::ising::fit_pseudo(&draws, &w, 3, m.domain(), None).unwrap();
    let best = mlcwm::dists::ising::pseudo_loglik(&draws, &w, &fit.model);
    let p = fit.model.params();
    for k in 0..p.len() {
        for delta in [-0.2, -0.05, 0.05, 0.2] {
            let mut q = p.clone();
            q[k] += delta;
            let other = mlcwm::dists::IsingModel::from_params(3, &q, m.domain()).unwrap();
            assert!(mlcwm::dists::ising::pseudo_loglik(&draws, &w, &other) < best);
        }
    }
}

fn table1_config(c_grid: Vec<usize>, starts: usize) -> mlcwm::model::FitConfig {
    mlcwm::model::FitConfig {
        c_grid,
        n_starts: starts,
        formula: builtin_table1().formula,
        ..Default::default()
    }
}

#[test]
fn nested_variants_agree_without_interactions() {
    let mut gt = builtin_table1();
    for c in &mut gt.clusters {
        c.gamma_pairs = vec![0.0; 3];
    }
    let sim = dgp::generate(&gt, &mut dgp::train_rng(40)).unwrap();
    let cfg = table1_config(vec![3], 3);
    let (full, _) = mlcwm::em::fit_best(sim.dataset(), 3, &cfg, mlcwm::model::Variant::Full).unwrap();
    let (nod, _) = mlcwm::em::fit_best(sim.dataset(), 3, &cfg, mlcwm::model::Variant::NoD).unwrap();
    let (full, nod) = (full.unwrap(), nod.unwrap());
    let extra = (full.n_params - nod.n_params) as f64;
    assert!((full.loglik - nod.loglik).abs() <= 2.0 * extra, "{} vs {}", full.loglik, nod.loglik);
}

#[test]
fn bic_penalizes_extra_clusters_on_single_component_data() {
    let mut gt = builtin_table1();
    gt.w = vec![1.0];
    gt.clusters = vec![gt.clusters[2].clone()];
    let mut increasing = 0;
    for seed in 0..10 {
        let sim = dgp::generate(&gt, &mut dgp::train_rng(500 + seed)).unwrap();
        let sel = mlcwm::em::fit_select(sim.dataset(), &table1_config(vec![1, 2, 3], 2)).unwrap();
        let bics: Vec<f64> = sel.table.iter().map(|r| r.bic.unwrap_or(f64::INFINITY)).collect();
        if bics.windows(2).all(|w| w[1] > w[0]) {
            increasing += 1;
        }
    }
    assert!(increasing > 5, "{increasing}/10");
}

/// Balanced noise: a Youden cutoff on an uninformative score carries no
/// accuracy information, so out-of-sample accuracy sits at the majority share.
#[test]
fn noise_response_gives_no_test_lift() {
    let gt = builtin_table1();
    let (train, test) = dgp::simulate_pair(&gt, 2000, 61).unwrap();
    let mut rng = rand::rngs::StdRng::seed_from_u64(3);
    let mut noisy = |ds: &mlcwm::data::Dataset| {
        let mut d = ds.clone();
        d.y.iter_mut().for_each(|y| *y = u8::from(rng.random::<f64>() < 0.5));
        d
    };
    let (tr, te) = (noisy(train.dataset()), noisy(test.dataset()));
    let share = |d: &mlcwm::data::Dataset| {
        let p = d.y.iter().map(|&y| y as f64).sum::<f64>() / d.n_obs() as f64;
        p.max(1.0 - p)
    };
    let (rows, _) = mlcwm::inference::compare_baselines(&tr, Some(&te), &table1_config(vec![3], 2), None).unwrap();
    for r in rows {
        let acc = r.test_accuracy.unwrap_or_else(|| panic!("{} failed: {:?}", r.method, r.error));
        assert!((acc - share(&te)).abs() <= 0.05, "{}: {acc} vs {}", r.method, share(&te));
    }
}

#[test]
fn scenario_grid_reflects_positive_risk_factors() {
    let gt = dgp::builtin_application_analogue();
    let sim = dgp::generate(&gt, &mut dgp::train_rng(90)).unwrap();
    let cfg = mlcwm::model::FitConfig {
        formula: gt.formula.clone(),
        n_starts: 3,
        ..Default::default()
    };
    let (fit, _) = mlcwm::em::fit_best(sim.dataset(), 3, &cfg, mlcwm::model::Variant::Full).unwrap();
    let fit = fit.unwrap();
    let ds = sim.dataset();
    // Three profiles, each without and with both risk factors.
    let mut patients = ds.subset(&[0, 0, 1, 1, 2, 2]);
    for (k, &(age, mcs)) in [(72.0, 50.0), (80.0, 38.0), (88.0, 28.0)].iter().enumerate() {
        for r in [2 * k, 2 * k + 1] {
            patients.continuous[0].values[r] = age;
            patients.continuous[1].values[r] = mcs;
            let flag = (r % 2) as f64;
            patients.fixed_only[0].values[r] = flag;
            patients.fixed_only[1].values[r] = flag;
        }
    }
    let grid = mlcwm::inference::scenario(&fit, &patients).unwrap();
    assert_eq!(grid.len() * 3, 18);
    let positive = fit.components.iter().all(|c| c.regression.beta[1] > 0.0 && c.regression.beta[2] > 0.0);
    assert!(positive, "fitted risk-factor effects should be positive in every cluster");
    for k in 0..3 {
        let (without, with) = (&grid[2 * k], &grid[2 * k + 1]);
        assert!(with.zero > without.zero);
        assert!(with.minus_sigma > without.minus_sigma && with.plus_sigma > without.plus_sigma);
    }
}

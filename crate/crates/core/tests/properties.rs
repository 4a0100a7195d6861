use std::sync::OnceLock;

use mlcwm::dgp;
use mlcwm::dists::ising::{self, enumerate_states};
use mlcwm::dists::{Domain, IsingModel};
use mlcwm::em;
use mlcwm::inference::{self, BMode};
use mlcwm::model::{FitConfig, ModelFit};
use proptest::prelude::*;

fn domain_strategy() -> impl Strategy<Value = Domain> {
    prop_oneof![Just(Domain::ZeroOne), Just(Domain::PlusMinusOne)]
}

fn model_strategy() -> impl Strategy<Value = IsingModel> {
    (1usize..=5, domain_strategy()).prop_flat_map(|(h, domain)| {
        let n = h + h * (h - 1) / 2;
        proptest::collection::vec(-3.0..3.0f64, n)
            .prop_map(move |p| IsingModel::from_params(h, &p, domain).unwrap())
    })
}

struct Fixture {
    fit: ModelFit,
    data: mlcwm::data::Dataset,
}

fn fixture() -> &'static Fixture {
    static CELL: OnceLock<Fixture> = OnceLock::new();
    CELL.get_or_init(|| {
        let gt = dgp::builtin_table1();
        let sim = dgp::generate(&gt, &mut dgp::train_rng(21)).unwrap();
        let cfg = FitConfig {
            formula: gt.formula.clone(),
            ..Default::default()
        };
        let fit = em::fit_single(sim.dataset(), 3, &cfg, 5).unwrap();
        Fixture {
            fit,
            data: sim.dataset().clone(),
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ising_normalizes(m in model_strategy()) {
        let total: f64 = enumerate_states(m.h(), m.domain())
            .iter()
            .map(|s| m.logpmf(s).unwrap().exp())
            .sum();
        prop_assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn ising_conditionals_match_enumeration(m in model_strategy()) {
        let states = enumerate_states(m.h(), m.domain());
        for s in &states {
            for l in 0..m.h() {
                let mut flip = s.clone();
                flip[l] = if s[l] == m.domain().high() { m.domain().low() } else { m.domain().high() };
                let ps = m.logpmf(s).unwrap().exp();
                let pf = m.logpmf(&flip).unwrap().exp();
                prop_assert!((m.conditional(s, l) - ps / (ps + pf)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn ising_conversion_is_an_involution(m in model_strategy()) {
        let back = m.convert_domain(m.domain().other()).convert_domain(m.domain());
        for (a, b) in m.params().iter().zip(back.params()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let other = m.convert_domain(m.domain().other());
        for (s, t) in enumerate_states(m.h(), m.domain()).iter().zip(enumerate_states(m.h(), other.domain())) {
            prop_assert!((m.logpmf(s).unwrap() - other.logpmf(&t).unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn pseudo_likelihood_gradient_matches_differences(
        m in model_strategy(),
        weights in proptest::collection::vec(0.1..3.0f64, 32),
    ) {
        let h = m.h();
        let states = enumerate_states(h, m.domain());
        let patterns: Vec<(Vec<i8>, f64)> = states.iter().cloned().zip(weights.iter().copied()).collect();
        let params = m.params();
        let mut grad = vec![0.0; params.len()];
        ising::pseudo_loglik_and_gradient(&patterns, &params, h, m.domain(), &mut grad);
        let mut scratch = vec![0.0; params.len()];
        for k in 0..params.len() {
            let step = 1e-6;
            let mut up = params.clone();
            up[k] += step;
            let mut dn = params.clone();
            dn[k] -= step;
            let fd = (ising::pseudo_loglik_and_gradient(&patterns, &up, h, m.domain(), &mut scratch)
                - ising::pseudo_loglik_and_gradient(&patterns, &dn, h, m.domain(), &mut scratch))
                / (2.0 * step);
            prop_assert!((fd - grad[k]).abs() <= 1e-5 * grad[k].abs().max(1.0), "k={} fd={} an={}", k, fd, grad[k]);
        }
    }

    #[test]
    fn responsibilities_normalize(rows in proptest::collection::vec(proptest::collection::vec(-800.0..50.0f64, 4), 1..40)) {
        let (tau, _) = em::responsibilities(&rows).unwrap();
        for r in &tau {
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn argmax_is_scale_invariant(row in proptest::collection::vec(0.01..1.0f64, 2..6), scale in 0.01..100.0f64) {
        let scaled: Vec<f64> = row.iter().map(|v| v * scale).collect();
        prop_assert_eq!(em::hard_assign(&[row]), em::hard_assign(&[scaled]));
    }

    #[test]
    fn classification_objective_is_additive(
        rows in proptest::collection::vec(proptest::collection::vec(-50.0..0.0f64, 3), 2..40),
        cut in 1usize..39,
    ) {
        let z = em::hard_assign(&rows);
        let cut = cut.min(rows.len() - 1);
        let whole = em::classification_loglik(&rows, &z);
        let parts = em::classification_loglik(&rows[..cut], &z[..cut]) + em::classification_loglik(&rows[cut..], &z[cut..]);
        prop_assert!((whole - parts).abs() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mixture_prediction_is_convex_and_label_free(
        row in 0usize..2000,
        u in proptest::collection::vec(-8.0..8.0f64, 2),
        shift in 0usize..3,
    ) {
        let fx = fixture();
        let mut one = fx.data.subset(&[row]);
        one.continuous[0].values[0] = u[0];
        one.continuous[1].values[0] = u[1];
        for mode in [BMode::MinusSigma, BMode::Zero, BMode::PlusSigma, BMode::GroupBlup] {
            let p = &inference::predict(&fx.fit, &one, mode).unwrap()[0];
            let lo = p.conditional.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = p.conditional.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(p.p >= lo - 1e-12 && p.p <= hi + 1e-12);
            prop_assert!((p.posteriors.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
        let mut relabeled = fx.fit.clone();
        relabeled.components.rotate_left(shift);
        let a = inference::predict(&fx.fit, &one, BMode::GroupBlup).unwrap()[0].p;
        let b = inference::predict(&relabeled, &one, BMode::GroupBlup).unwrap()[0].p;
        prop_assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn scenario_is_monotone_in_the_intercept() {
    let fx = fixture();
    let rows: Vec<usize> = (0..50).collect();
    for s in inference::scenario(&fx.fit, &fx.data.subset(&rows)).unwrap() {
        assert!(s.minus_sigma <= s.zero && s.zero <= s.plus_sigma);
    }
}

#[test]
fn single_component_prediction_is_its_logistic() {
    let gt = dgp::builtin_table1();
    let sim = dgp::generate(&gt, &mut dgp::train_rng(2)).unwrap();
    let cfg = FitConfig {
        formula: gt.formula.clone(),
        ..Default::default()
    };
    let fit = em::fit_single(sim.dataset(), 1, &cfg, 1).unwrap();
    let preds = inference::predict(&fit, sim.dataset(), BMode::Zero).unwrap();
    let x = mlcwm::data::build_design(sim.dataset(), &gt.formula).unwrap();
    for (i, p) in preds.iter().enumerate().take(100) {
        let want = fit.components[0].regression.probability(&x.row(i), 0.0);
        assert!((p.p - want).abs() < 1e-12);
    }
}

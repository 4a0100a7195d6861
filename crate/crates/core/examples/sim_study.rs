//! Runs the simulation protocol on a few replicates and prints per-replicate
//! metrics. Usage: `cargo run --example sim_study -p mlcwm -- [reps] [starts] [kmeans:0|1]`.

use std::time::Instant;

use mlcwm::dgp;
use mlcwm::em;
use mlcwm::inference;
use mlcwm::model::{FitConfig, InitStrategy, Variant};

fn main() -> mlcwm::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let reps = args.first().copied().unwrap_or(3);
    let starts = args.get(1).copied().unwrap_or(5);
    let init = if args.get(2) == Some(&1) { InitStrategy::Kmeans } else { InitStrategy::Random };
    let gt = dgp::builtin_table1();
    for rep in 0..reps as u64 {
        let t0 = Instant::now();
        let (train, test) = dgp::simulate_pair(&gt, 200, 1000 + rep)?;
        let cfg = FitConfig {
            c_grid: vec![2, 3, 4],
            n_starts: starts,
            seed: rep,
            init,
            formula: gt.formula.clone(),
            ..Default::default()
        };
        let sel = em::fit_select(train.dataset(), &cfg)?;
        let full = inference::evaluate_fit(&sel.best, train.dataset(), Some(test.dataset()), Some(&train.labels))?;
        let (nod, _) = em::fit_best(train.dataset(), 3, &cfg, Variant::NoD)?;
        let nod = inference::evaluate_fit(&nod.expect("a start"), train.dataset(), Some(test.dataset()), Some(&train.labels))?;
        let glm = inference::evaluate_glm(train.dataset(), Some(test.dataset()), &gt.formula)?;
        let glmer = inference::evaluate_glmer(train.dataset(), Some(test.dataset()), &gt.formula)?;
        let bics: Vec<String> = sel.table.iter().map(|r| format!("C{}={:.1}", r.c, r.bic.unwrap_or(f64::NAN))).collect();
        println!(
            "rep {rep}: C*={} [{}] ari full {:.3} noD {:.3} | train {:.3}/{:.3}/{:.3}/{:.3} test {:.3}/{:.3}/{:.3}/{:.3} iters {} ({:.1}s)",
            sel.best.c,
            bics.join(" "),
            full.ari.unwrap(),
            nod.ari.unwrap(),
            full.train_accuracy.unwrap(),
            nod.train_accuracy.unwrap(),
            glmer.train_accuracy.unwrap(),
            glm.train_accuracy.unwrap(),
            full.test_accuracy.unwrap(),
            nod.test_accuracy.unwrap(),
            glmer.test_accuracy.unwrap(),
            glm.test_accuracy.unwrap(),
            sel.best.iterations,
            t0.elapsed().as_secs_f64()
        );
    }
    Ok(())
}

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mlcwm::data::{self, Dataset};
use mlcwm::dgp::{self, GroundTruth, TruthSidecar};
use mlcwm::em::{self, BicRow, StartRecord};
use mlcwm::inference::{self, MethodResult};
use mlcwm::model::{FitConfig, ModelFit, Variant};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{output_dir, ConfigFile, DataSection, ModelFlags, ModelSection, OutputSection};
use crate::manifest::RunManifest;
use crate::{Dgp, DgpArgs, EvaluateArgs, FitDataArgs, PredictArgs, ReproduceArgs, SimulateArgs};

fn ground_truth(args: &DgpArgs, m: &mut RunManifest) -> Result<GroundTruth> {
    let gt = match &args.truth_file {
        Some(p) => serde_json::from_slice(&m.read_input(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => match args.dgp {
            Dgp::Table1 => dgp::builtin_table1(),
            Dgp::Analogue => dgp::builtin_application_analogue(),
        },
    };
    gt.validate()?;
    Ok(gt)
}

fn load_csv(m: &mut RunManifest, path: &Path, manifest: &data::RoleManifest) -> Result<Dataset> {
    let bytes = m.read_input(path)?;
    data::read_dataset(bytes.as_slice(), manifest, None).with_context(|| format!("loading {}", path.display()))
}

fn load_fit(m: &mut RunManifest, path: &Path) -> Result<ModelFit> {
    let bytes = m.read_input(path)?;
    let text = String::from_utf8(bytes).context("fit file is not UTF-8")?;
    ModelFit::from_json(&text).with_context(|| format!("loading fit {}", path.display()))
}

fn load_with_fit_schema(m: &mut RunManifest, path: &Path, fit: &ModelFit) -> Result<Dataset> {
    let bytes = m.read_input(path)?;
    data::read_with_schema(bytes.as_slice(), &fit.schema).with_context(|| format!("loading {}", path.display()))
}

fn fail_on_violations(ds: &Dataset) -> Result<()> {
    let v = data::validate(ds);
    if v.is_empty() {
        return Ok(());
    }
    for x in &v {
        log::error!("{x}");
    }
    bail!("{} data violation(s); first: {}", v.len(), v[0])
}

pub fn simulate(a: &SimulateArgs) -> Result<PathBuf> {
    let out = output_dir(a.dgp.out.as_deref(), None);
    let mut m = RunManifest::new("simulate", Some(a.seed), serde_json::json!({ "dgp": format!("{:?}", a.dgp.dgp), "reps": a.reps, "n_test": a.dgp.n_test }))?;
    let gt = ground_truth(&a.dgp, &mut m)?;
    if a.reps == 0 {
        bail!("--reps must be at least 1");
    }
    for r in 0..a.reps {
        let seed = a.seed + r;
        let dir = if a.reps == 1 { out.clone() } else { out.join(format!("rep_{:03}", r + 1)) };
        m.phase("generate");
        let (train, test) = dgp::simulate_pair(&gt, a.dgp.n_test, seed)?;
        m.phase("write");
        let mut buf = Vec::new();
        train.dataset().write_csv(&mut buf)?;
        m.write(&dir.join("train.csv"), buf)?;
        let mut buf = Vec::new();
        test.dataset().write_csv(&mut buf)?;
        m.write(&dir.join("test.csv"), buf)?;
        let sidecar = TruthSidecar {
            seed,
            truth: gt.clone(),
            train_labels: train.labels.clone(),
            train_intercepts: train.intercepts.clone(),
            test_labels: test.labels.clone(),
            test_intercepts: test.intercepts.clone(),
        };
        m.write_json(&dir.join("truth.json"), &sidecar)?;
        let roles = train.dataset().manifest();
        let cfg = ConfigFile {
            seed: Some(seed),
            data: DataSection {
                path: Some("train.csv".into()),
                test_path: Some("test.csv".into()),
                domain: Some(roles.domain),
                roles: roles.roles,
                levels: roles.levels,
            },
            model: ModelSection {
                formula: Some(gt.formula.clone()),
                ..Default::default()
            },
            output: OutputSection::default(),
        };
        m.write(&dir.join("config.toml"), cfg.to_toml()?)?;
    }
    m.summary = serde_json::json!({ "replicates": a.reps, "n_train": gt.n_obs(), "n_test": a.dgp.n_test });
    m.finish(&out)
}

fn start_failures(starts: &[StartRecord]) -> usize {
    starts.iter().filter(|s| s.error.is_some()).count()
}

pub fn fit(flags: &ModelFlags) -> Result<PathBuf> {
    let r = flags.resolve()?;
    let c = match r.fit.c_grid.as_slice() {
        [c] => *c,
        _ => bail!("fit takes a single C (got {:?}); use select for a grid", r.fit.c_grid),
    };
    let mut m = RunManifest::new("fit", Some(r.fit.seed), &r)?;
    m.phase("load");
    let ds = load_csv(&mut m, &r.data, &r.manifest)?;
    fail_on_violations(&ds)?;
    m.phase("fit");
    let (best, starts) = em::fit_best(&ds, c, &r.fit, Variant::Full)?;
    m.failure("failed_starts", start_failures(&starts));
    let Some(mut best) = best else {
        m.write_csv(&r.out.join("starts.csv"), &starts)?;
        m.finish(&r.out)?;
        bail!("every start failed at C={c}");
    };
    inference::attach_train_scores(&mut best, &ds)?;
    m.phase("write");
    m.write_json(&r.out.join("fit.json"), &best)?;
    m.write_csv(&r.out.join("starts.csv"), &starts)?;
    m.summary = serde_json::json!({
        "c": best.c, "loglik": best.loglik, "bic": best.bic, "iterations": best.iterations,
        "converged": best.converged, "train_accuracy": best.train_accuracy,
    });
    m.finish(&r.out)
}

pub fn select(flags: &ModelFlags) -> Result<PathBuf> {
    let r = flags.resolve()?;
    let mut m = RunManifest::new("select", Some(r.fit.seed), &r)?;
    m.phase("load");
    let ds = load_csv(&mut m, &r.data, &r.manifest)?;
    fail_on_violations(&ds)?;
    m.phase("fit");
    let sel = em::fit_select(&ds, &r.fit)?;
    m.failure("failed_starts", start_failures(&sel.starts));
    m.failure("failed_c", sel.table.iter().filter(|row| row.bic.is_none()).count());
    let mut best = sel.best;
    inference::attach_train_scores(&mut best, &ds)?;
    m.phase("write");
    m.write_json(&r.out.join("fit.json"), &best)?;
    m.write_csv(&r.out.join("bic.csv"), &sel.table)?;
    m.write_csv(&r.out.join("starts.csv"), &sel.starts)?;
    m.summary = serde_json::json!({
        "selected_c": best.c, "bic": best.bic, "loglik": best.loglik, "train_accuracy": best.train_accuracy,
    });
    m.finish(&r.out)
}

fn csv_bytes(header: Vec<String>, rows: Vec<Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))
}

pub fn predict(a: &PredictArgs) -> Result<PathBuf> {
    let out = output_dir(a.io.out.as_deref(), None);
    let mut m = RunManifest::new("predict", None, serde_json::json!({ "b_mode": a.b_mode }))?;
    m.phase("load");
    let fit = load_fit(&mut m, &a.io.fit)?;
    let ds = load_with_fit_schema(&mut m, &a.io.data, &fit)?;
    m.seed = Some(fit.seed);
    m.phase("predict");
    let preds = inference::predict(&fit, &ds, a.b_mode)?;
    m.phase("write");
    let c = fit.c;
    let mut header = vec!["row".to_string(), ds.group_name.clone(), "p".into()];
    header.extend((1..=c).map(|k| format!("posterior_{k}")));
    header.extend((1..=c).map(|k| format!("p_cluster_{k}")));
    let rows = preds
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut r = vec![(i + 1).to_string(), ds.group_labels[ds.groups[i]].clone(), p.p.to_string()];
            r.extend(p.posteriors.iter().map(f64::to_string));
            r.extend(p.conditional.iter().map(f64::to_string));
            r
        })
        .collect();
    m.write(&out.join("predictions.csv"), csv_bytes(header, rows)?)?;
    m.write_json(&out.join("predictions.json"), &preds)?;
    if ds.has_response {
        let scores: Vec<f64> = preds.iter().map(|p| p.p).collect();
        let roc = inference::roc_cutoff(&scores, &ds.y)?;
        let at_train = fit.train_cutoff.map(|cut| inference::accuracy_at(&scores, &ds.y, cut));
        m.summary = serde_json::json!({
            "rows": preds.len(), "auc": roc.auc, "train_cutoff": fit.train_cutoff, "accuracy_at_train_cutoff": at_train,
        });
    } else {
        m.summary = serde_json::json!({ "rows": preds.len() });
    }
    m.finish(&out)
}

pub fn scenario(a: &FitDataArgs) -> Result<PathBuf> {
    let out = output_dir(a.out.as_deref(), None);
    let mut m = RunManifest::new("scenario", None, ())?;
    m.phase("load");
    let fit = load_fit(&mut m, &a.fit)?;
    let ds = load_with_fit_schema(&mut m, &a.data, &fit)?;
    m.seed = Some(fit.seed);
    m.phase("predict");
    let rows = inference::scenario(&fit, &ds)?;
    m.phase("write");
    m.write_csv(&out.join("scenario.csv"), &rows)?;
    m.write_json(&out.join("scenario.json"), &rows)?;
    m.summary = serde_json::json!({ "patients": rows.len(), "predictions": 3 * rows.len() });
    m.finish(&out)
}

/// One value of the plot-ready long table.
#[derive(Debug, Clone, Serialize)]
struct LongRow {
    replicate: u64,
    method: String,
    metric: String,
    value: f64,
}

fn long_rows(replicate: u64, results: &[MethodResult]) -> Vec<LongRow> {
    let mut out = Vec::new();
    for r in results {
        let metrics = [
            ("train_accuracy", r.train_accuracy),
            ("test_accuracy", r.test_accuracy),
            ("train_auc", r.train_auc),
            ("cutoff", r.cutoff),
            ("ari", r.ari),
            ("bic", r.bic),
        ];
        for (name, v) in metrics {
            if let Some(value) = v {
                out.push(LongRow {
                    replicate,
                    method: r.method.clone(),
                    metric: name.into(),
                    value,
                });
            }
        }
    }
    out
}

fn read_truth(m: &mut RunManifest, path: &Path) -> Result<Vec<usize>> {
    let bytes = m.read_input(path)?;
    if let Ok(s) = serde_json::from_slice::<TruthSidecar>(&bytes) {
        return Ok(s.train_labels);
    }
    serde_json::from_slice::<Vec<usize>>(&bytes).with_context(|| format!("{} is neither a truth sidecar nor a label array", path.display()))
}

pub fn evaluate(a: &EvaluateArgs) -> Result<PathBuf> {
    let out = output_dir(a.io.out.as_deref(), None);
    let mut m = RunManifest::new("evaluate", None, ())?;
    m.phase("load");
    let fit = load_fit(&mut m, &a.io.fit)?;
    let train = load_with_fit_schema(&mut m, &a.io.data, &fit)?;
    let test = match &a.test {
        Some(p) => Some(load_with_fit_schema(&mut m, p, &fit)?),
        None => None,
    };
    let truth = match &a.truth {
        Some(p) => Some(read_truth(&mut m, p)?),
        None => None,
    };
    m.seed = Some(fit.seed);
    m.phase("evaluate");
    let formula = &fit.config.formula;
    let results = vec![
        inference::evaluate_fit(&fit, &train, test.as_ref(), truth.as_deref())?,
        inference::evaluate_glm(&train, test.as_ref(), formula)?,
        inference::evaluate_glmer(&train, test.as_ref(), formula)?,
    ];
    let effects = inference::group_effects(&fit);
    m.phase("write");
    m.write_json(&out.join("evaluation.json"), &serde_json::json!({ "methods": results, "group_effects": effects }))?;
    m.write_csv(&out.join("evaluation.csv"), &long_rows(0, &results))?;
    m.write_csv(&out.join("group_effects.csv"), &effects)?;
    m.summary = serde_json::to_value(&results)?;
    m.finish(&out)
}

#[derive(Debug, Clone, Serialize)]
struct ReplicateBic {
    replicate: u64,
    c: usize,
    bic: Option<f64>,
    loglik: Option<f64>,
    n_params: Option<usize>,
    failed_starts: usize,
}

struct ReplicateOutcome {
    selected_c: usize,
    bic: Vec<BicRow>,
    methods: Vec<MethodResult>,
    failed_starts: usize,
}

fn run_replicate(gt: &GroundTruth, a: &ReproduceArgs, r: u64) -> Result<ReplicateOutcome> {
    let seed = a.seed + r;
    let (train, test) = dgp::simulate_pair(gt, a.dgp.n_test, seed)?;
    let (tr, te) = (train.dataset(), test.dataset());
    let cfg = FitConfig {
        c_grid: a.c.clone(),
        n_starts: a.starts,
        seed,
        init: a.init,
        formula: gt.formula.clone(),
        ..Default::default()
    };
    let sel = em::fit_select(tr, &cfg)?;
    let (nod, nod_starts) = em::fit_best(tr, sel.best.c, &cfg, Variant::NoD)?;
    let truth = Some(train.labels.as_slice());
    let mut methods = vec![inference::evaluate_fit(&sel.best, tr, Some(te), truth)?];
    methods.push(match nod {
        Some(f) => inference::evaluate_fit(&f, tr, Some(te), truth)?,
        None => bail!("replicate {r}: every noD start failed"),
    });
    methods.push(inference::evaluate_glm(tr, Some(te), &gt.formula)?);
    methods.push(inference::evaluate_glmer(tr, Some(te), &gt.formula)?);
    log::info!("replicate {}: C={} ARI {:.3}", r + 1, sel.best.c, methods[0].ari.unwrap_or(f64::NAN));
    Ok(ReplicateOutcome {
        selected_c: sel.best.c,
        bic: sel.table,
        methods,
        failed_starts: start_failures(&sel.starts) + start_failures(&nod_starts),
    })
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

pub fn reproduce(a: &ReproduceArgs) -> Result<PathBuf> {
    let out = output_dir(a.dgp.out.as_deref(), None);
    let echo = serde_json::json!({
        "dgp": format!("{:?}", a.dgp.dgp), "reps": a.reps, "starts": a.starts, "c_grid": a.c,
        "n_test": a.dgp.n_test, "init": a.init,
    });
    let mut m = RunManifest::new("reproduce-sim", Some(a.seed), echo)?;
    let gt = ground_truth(&a.dgp, &mut m)?;
    m.phase("replicates");
    let outcomes: Vec<Result<ReplicateOutcome>> = (0..a.reps).into_par_iter().map(|r| run_replicate(&gt, a, r)).collect();
    m.phase("write");
    let mut long = Vec::new();
    let mut bic = Vec::new();
    let mut chosen: BTreeMap<usize, usize> = BTreeMap::new();
    let mut failed = 0;
    for (r, o) in outcomes.into_iter().enumerate() {
        let r = r as u64 + 1;
        match o {
            Ok(o) => {
                *chosen.entry(o.selected_c).or_default() += 1;
                m.failure("failed_starts", o.failed_starts);
                long.extend(long_rows(r, &o.methods));
                long.push(LongRow {
                    replicate: r,
                    method: o.methods[0].method.clone(),
                    metric: "selected_c".into(),
                    value: o.selected_c as f64,
                });
                bic.extend(o.bic.into_iter().map(|row| ReplicateBic {
                    replicate: r,
                    c: row.c,
                    bic: row.bic,
                    loglik: row.loglik,
                    n_params: row.n_params,
                    failed_starts: row.failed_starts,
                }));
            }
            Err(e) => {
                log::error!("replicate {r} failed: {e}");
                failed += 1;
            }
        }
    }
    m.failure("failed_replicates", failed);
    let mut medians: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    let mut keys: Vec<(String, String)> = long.iter().map(|x| (x.method.clone(), x.metric.clone())).collect();
    keys.sort();
    keys.dedup();
    for (method, metric) in keys {
        let vals = long.iter().filter(|x| x.method == method && x.metric == metric).map(|x| x.value).collect();
        if let Some(v) = median(vals) {
            medians.entry(method).or_default().insert(metric, v);
        }
    }
    let summary = serde_json::json!({ "replicates": a.reps, "failed": failed, "selected_c": chosen, "medians": medians });
    m.write_csv(&out.join("metrics.csv"), &long)?;
    m.write_csv(&out.join("bic.csv"), &bic)?;
    m.write_json(&out.join("summary.json"), &summary)?;
    m.summary = summary;
    if failed as u64 == a.reps {
        m.finish(&out)?;
        bail!("every replicate failed");
    }
    m.finish(&out)
}

//! Prediction, scenario analysis, classification metrics and baselines.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, INTERCEPT};
use crate::em::{self, Prepared};
use crate::error::{Error, Result};
use crate::glmm::{self, sigmoid, MixedOptions};
use crate::model::{FitConfig, ModelFit, Variant};

/// Value of the random intercept used inside each component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BMode {
    MinusSigma,
    Zero,
    PlusSigma,
    /// The component's fitted mode for a known group, 0 otherwise.
    GroupBlup,
}

impl std::str::FromStr for BMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minus-sigma" => Ok(Self::MinusSigma),
            "zero" => Ok(Self::Zero),
            "plus-sigma" => Ok(Self::PlusSigma),
            "group" | "group-blup" => Ok(Self::GroupBlup),
            other => Err(Error::Config(format!("unknown random-effect mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Mixture probability of a positive response.
    pub p: f64,
    /// Component weights given the covariates.
    pub posteriors: Vec<f64>,
    /// Each component's probability of a positive response.
    pub conditional: Vec<f64>,
    pub mode: BMode,
}

fn check_schema(fit: &ModelFit, ds: &Dataset) -> Result<()> {
    let s = &fit.schema;
    let mut missing = Vec::new();
    let have = |name: &str| {
        ds.continuous.iter().chain(&ds.fixed_only).any(|c| c.name == name)
            || ds.dichotomous.iter().any(|c| c.name == name)
            || ds.categorical.iter().any(|c| c.name == name)
    };
    for name in s
        .continuous
        .iter()
        .chain(&s.dichotomous)
        .chain(&s.fixed_only)
        .chain(s.categorical.iter().map(|(n, _)| n))
    {
        if !have(name) {
            missing.push(name.clone());
        }
    }
    let known: Vec<&String> = s
        .continuous
        .iter()
        .chain(&s.dichotomous)
        .chain(&s.fixed_only)
        .chain(s.categorical.iter().map(|(n, _)| n))
        .collect();
    let extra: Vec<String> = ds
        .continuous
        .iter()
        .chain(&ds.fixed_only)
        .map(|c| &c.name)
        .chain(ds.dichotomous.iter().map(|c| &c.name))
        .chain(ds.categorical.iter().map(|c| &c.name))
        .filter(|n| !known.contains(n))
        .cloned()
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::Schema { missing, extra });
    }
    for (name, levels) in &s.categorical {
        let col = ds.categorical.iter().find(|c| &c.name == name).expect("checked above");
        if let Some(bad) = col.levels.get(levels.len()) {
            return Err(Error::UnknownLevel {
                column: name.clone(),
                level: bad.clone(),
                known: levels.clone(),
            });
        }
        if col.levels[..] != levels[..col.levels.len()] {
            return Err(Error::Config(format!("column `{name}` has a different level order than the fit")));
        }
    }
    Ok(())
}

/// Mixture predictions for every row of `ds`.
pub fn predict(fit: &ModelFit, ds: &Dataset, mode: BMode) -> Result<Vec<Prediction>> {
    check_schema(fit, ds)?;
    let mut ds = ds.clone();
    // Align categorical level lists with the fit so the design has the same columns.
    for (name, levels) in &fit.schema.categorical {
        if let Some(col) = ds.categorical.iter_mut().find(|c| &c.name == name) {
            col.levels = levels.clone();
        }
    }
    let prep = Prepared::new(&ds, &fit.config.formula, fit.config.ising_domain)?;
    let cov = em::covariate_log_densities(&prep, &fit.components)?;
    let (post, _) = em::responsibilities(&cov)?;
    let index: HashMap<&str, usize> = fit
        .schema
        .group_labels
        .iter()
        .enumerate()
        .map(|(k, l)| (l.as_str(), k))
        .collect();
    let fit_group: Vec<Option<usize>> = ds
        .groups
        .iter()
        .map(|&g| index.get(ds.group_labels[g].as_str()).copied())
        .collect();
    let m = prep.m();
    Ok((0..prep.n())
        .map(|i| {
            let row: Vec<f64> = (0..m).map(|a| prep.x[(i, a)]).collect();
            let conditional: Vec<f64> = fit
                .components
                .iter()
                .map(|comp| {
                    let reg = &comp.regression;
                    let b = match mode {
                        BMode::MinusSigma => -reg.sigma_b,
                        BMode::Zero => 0.0,
                        BMode::PlusSigma => reg.sigma_b,
                        BMode::GroupBlup => fit_group[i].map_or(0.0, |g| reg.intercept(g)),
                    };
                    reg.probability(&row, b)
                })
                .collect();
            let p = post[i].iter().zip(&conditional).map(|(w, q)| w * q).sum::<f64>().clamp(0.0, 1.0);
            Prediction {
                p,
                posteriors: post[i].clone(),
                conditional,
                mode,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub row: usize,
    pub group: String,
    pub minus_sigma: f64,
    pub zero: f64,
    pub plus_sigma: f64,
}

/// Predictions at `b = -sigma_bc, 0, +sigma_bc`, the offset applied inside
/// every component before mixing.
pub fn scenario(fit: &ModelFit, ds: &Dataset) -> Result<Vec<ScenarioRow>> {
    let lo = predict(fit, ds, BMode::MinusSigma)?;
    let mid = predict(fit, ds, BMode::Zero)?;
    let hi = predict(fit, ds, BMode::PlusSigma)?;
    Ok((0..lo.len())
        .map(|i| ScenarioRow {
            row: i + 1,
            group: ds.group_labels[ds.groups[i]].clone(),
            minus_sigma: lo[i].p,
            zero: mid[i].p,
            plus_sigma: hi[i].p,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Roc {
    pub auc: f64,
    /// Predict positive when `score >= cutoff`.
    pub cutoff: f64,
    pub youden: f64,
    pub accuracy: f64,
}

pub fn accuracy_at(scores: &[f64], labels: &[u8], cutoff: f64) -> f64 {
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &y)| (s >= cutoff) == (y == 1))
        .count();
    hits as f64 / scores.len() as f64
}

/// Empirical ROC: trapezoid AUC and the cutoff maximizing Youden's J
/// (ties go to the lower cutoff).
pub fn roc_cutoff(scores: &[f64], labels: &[u8]) -> Result<Roc> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch(scores.len(), labels.len()));
    }
    let n1 = labels.iter().filter(|&&y| y == 1).count() as f64;
    let n0 = labels.len() as f64 - n1;
    if n1 == 0.0 || n0 == 0.0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0.0, 0.0);
    let (mut prev_tpr, mut prev_fpr) = (0.0, 0.0);
    let mut auc = 0.0;
    let mut best = (f64::NEG_INFINITY, f64::INFINITY);
    let mut k = 0;
    while k < order.len() {
        let t = scores[order[k]];
        while k < order.len() && scores[order[k]] == t {
            if labels[order[k]] == 1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            k += 1;
        }
        let (tpr, fpr) = (tp / n1, fp / n0);
        auc += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_tpr = tpr;
        prev_fpr = fpr;
        let j = tpr - fpr;
        // Thresholds arrive in decreasing order, so >= prefers the lower one.
        if j >= best.0 {
            best = (j, t);
        }
    }
    Ok(Roc {
        auc,
        cutoff: best.1,
        youden: best.0,
        accuracy: accuracy_at(scores, labels, best.1),
    })
}

fn comb2(x: f64) -> f64 {
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index between two labelings.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    let mut table: HashMap<(usize, usize), f64> = HashMap::new();
    let mut ra: HashMap<usize, f64> = HashMap::new();
    let mut rb: HashMap<usize, f64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1.0;
        *ra.entry(x).or_default() += 1.0;
        *rb.entry(y).or_default() += 1.0;
    }
    let index: f64 = table.values().map(|&v| comb2(v)).sum();
    let sa: f64 = ra.values().map(|&v| comb2(v)).sum();
    let sb: f64 = rb.values().map(|&v| comb2(v)).sum();
    let total = comb2(a.len() as f64);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sa * sb / total;
    let max = (sa + sb) / 2.0;
    if max == expected {
        return Ok(if index == max { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

/// A group whose interval `b +- 1.96 sd` excludes zero is flagged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEffect {
    pub cluster: usize,
    pub group: String,
    pub b: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
    pub significant: bool,
}

pub fn group_effects(fit: &ModelFit) -> Vec<GroupEffect> {
    let mut out = Vec::new();
    for (c, comp) in fit.components.iter().enumerate() {
        for (j, label) in fit.schema.group_labels.iter().enumerate() {
            let b = comp.regression.intercept(j);
            let sd = comp.regression.b_sd.get(j).copied().unwrap_or(comp.regression.sigma_b);
            let (lower, upper) = (b - 1.96 * sd, b + 1.96 * sd);
            out.push(GroupEffect {
                cluster: c + 1,
                group: label.clone(),
                b,
                sd,
                lower,
                upper,
                significant: lower > 0.0 || upper < 0.0,
            });
        }
    }
    out
}

/// Stores the Youden cutoff and in-sample accuracy (group modes) on the fit.
pub fn attach_train_scores(fit: &mut ModelFit, train: &Dataset) -> Result<Roc> {
    let scores: Vec<f64> = predict(fit, train, BMode::GroupBlup)?.iter().map(|p| p.p).collect();
    let roc = roc_cutoff(&scores, &train.y)?;
    fit.train_cutoff = Some(roc.cutoff);
    fit.train_accuracy = Some(roc.accuracy);
    Ok(roc)
}

/// Train/test scores of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub train_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub train_auc: Option<f64>,
    pub cutoff: Option<f64>,
    pub ari: Option<f64>,
    pub bic: Option<f64>,
    pub error: Option<String>,
}

impl MethodResult {
    fn failed(method: &str, e: Error) -> Self {
        Self {
            method: method.into(),
            train_accuracy: None,
            test_accuracy: None,
            train_auc: None,
            cutoff: None,
            ari: None,
            bic: None,
            error: Some(e.to_string()),
        }
    }
}

fn scored(method: &str, train: (&[f64], &[u8]), test: Option<(&[f64], &[u8])>, bic: f64, ari: Option<f64>) -> Result<MethodResult> {
    let roc = roc_cutoff(train.0, train.1)?;
    Ok(MethodResult {
        method: method.into(),
        train_accuracy: Some(roc.accuracy),
        test_accuracy: test.map(|(s, y)| accuracy_at(s, y, roc.cutoff)),
        train_auc: Some(roc.auc),
        cutoff: Some(roc.cutoff),
        ari,
        bic: Some(bic),
        error: None,
    })
}

/// Scores a fitted mixture: group modes on the training rows, `b = 0` on
/// test rows (their intercepts are not the training ones).
pub fn evaluate_fit(
    fit: &ModelFit,
    train: &Dataset,
    test: Option<&Dataset>,
    truth: Option<&[usize]>,
) -> Result<MethodResult> {
    let s_train: Vec<f64> = predict(fit, train, BMode::GroupBlup)?.iter().map(|p| p.p).collect();
    let s_test = match test {
        Some(t) => Some(predict(fit, t, BMode::Zero)?.iter().map(|p| p.p).collect::<Vec<_>>()),
        None => None,
    };
    let ari = match truth {
        Some(t) => Some(adjusted_rand_index(t, &fit.z)?),
        None => None,
    };
    let name = match fit.variant {
        Variant::Full => "ML-CWMd",
        Variant::NoD => "ML-CWMd-noD",
    };
    scored(
        name,
        (&s_train, &train.y),
        s_test.as_deref().zip(test.map(|t| t.y.as_slice())),
        fit.bic,
        ari,
    )
}

fn with_intercept(formula: &[String]) -> Vec<String> {
    let mut f = formula.to_vec();
    if !f.iter().any(|t| t == INTERCEPT) {
        f.insert(0, INTERCEPT.to_string());
    }
    f
}

/// Pooled logistic regression with an intercept.
pub fn evaluate_glm(train: &Dataset, test: Option<&Dataset>, formula: &[String]) -> Result<MethodResult> {
    let f = with_intercept(formula);
    let x = crate::data::build_design(train, &f)?.x;
    let fit = glmm::fit_logistic_glm(&x, &train.y, &vec![1.0; train.n_obs()])?;
    let score = |x: &nalgebra::DMatrix<f64>| -> Vec<f64> {
        (0..x.nrows())
            .map(|i| sigmoid((0..x.ncols()).map(|a| x[(i, a)] * fit.beta[a]).sum()))
            .collect()
    };
    let s_train = score(&x);
    let s_test = match test {
        Some(t) => Some(score(&crate::data::build_design(t, &f)?.x)),
        None => None,
    };
    let bic = -2.0 * fit.loglik + f64::from(x.ncols() as u32) * (train.n_obs() as f64).ln();
    scored("GLM", (&s_train, &train.y), s_test.as_deref().zip(test.map(|t| t.y.as_slice())), bic, None)
}

/// Random-intercept logistic regression with a fixed intercept.
pub fn evaluate_glmer(train: &Dataset, test: Option<&Dataset>, formula: &[String]) -> Result<MethodResult> {
    let f = with_intercept(formula);
    let x = crate::data::build_design(train, &f)?.x;
    let fit = glmm::fit_logistic_mixed(
        &x,
        &train.groups,
        train.n_groups(),
        &train.y,
        &vec![1.0; train.n_obs()],
        &MixedOptions {
            standard_errors: false,
            ..Default::default()
        },
    )?;
    let row = |x: &nalgebra::DMatrix<f64>, i: usize| -> Vec<f64> { (0..x.ncols()).map(|a| x[(i, a)]).collect() };
    let s_train: Vec<f64> = (0..x.nrows())
        .map(|i| fit.probability(&row(&x, i), fit.intercept(train.groups[i])))
        .collect();
    let s_test = match test {
        Some(t) => {
            let xt = crate::data::build_design(t, &f)?.x;
            Some((0..xt.nrows()).map(|i| fit.probability(&row(&xt, i), 0.0)).collect::<Vec<_>>())
        }
        None => None,
    };
    let k = x.ncols() + 1;
    let bic = -2.0 * fit.loglik + k as f64 * (train.n_obs() as f64).ln();
    scored("GLMER", (&s_train, &train.y), s_test.as_deref().zip(test.map(|t| t.y.as_slice())), bic, None)
}

/// Fits and scores the full mixture, the independent-binary variant, the
/// pooled GLM and the random-intercept GLM. The mixtures use the C with the
/// lowest BIC over `cfg.c_grid`; the variant reuses that C. A failed method
/// keeps its row with the error recorded.
pub fn compare_baselines(
    train: &Dataset,
    test: Option<&Dataset>,
    cfg: &FitConfig,
    truth: Option<&[usize]>,
) -> Result<(Vec<MethodResult>, Option<ModelFit>)> {
    cfg.validate()?;
    let mut rows = Vec::new();
    let full = em::fit_select(train, cfg).map(|s| s.best);
    let c = full.as_ref().map_or(cfg.c_grid[0], |f| f.c);
    match &full {
        Ok(fit) => rows.push(evaluate_fit(fit, train, test, truth).unwrap_or_else(|e| MethodResult::failed("ML-CWMd", e))),
        Err(e) => rows.push(MethodResult::failed("ML-CWMd", Error::InvalidData(e.to_string()))),
    }
    let nod = em::fit_best(train, c, cfg, Variant::NoD).and_then(|(best, _)| {
        best.ok_or_else(|| Error::InvalidData("every start failed".into()))
    });
    rows.push(match nod {
        Ok(fit) => evaluate_fit(&fit, train, test, truth).unwrap_or_else(|e| MethodResult::failed("ML-CWMd-noD", e)),
        Err(e) => MethodResult::failed("ML-CWMd-noD", e),
    });
    rows.push(evaluate_glm(train, test, &cfg.formula).unwrap_or_else(|e| MethodResult::failed("GLM", e)));
    rows.push(evaluate_glmer(train, test, &cfg.formula).unwrap_or_else(|e| MethodResult::failed("GLMER", e)));
    Ok((rows, full.ok()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn roc_separated() {
        let r = roc_cutoff(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap();
        assert_eq!(r.auc, 1.0);
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.cutoff, 0.8);
    }

    #[test]
    fn roc_matches_enumeration() {
        let s = [0.3, 0.7, 0.2, 0.9, 0.5, 0.4];
        let y = [0u8, 1, 0, 1, 0, 1];
        let r = roc_cutoff(&s, &y).unwrap();
        let mut best = (f64::NEG_INFINITY, 0.0);
        let mut cuts: Vec<f64> = s.to_vec();
        cuts.sort_by(|a, b| a.total_cmp(b));
        for &t in &cuts {
            let tp = s.iter().zip(&y).filter(|(&v, &l)| v >= t && l == 1).count() as f64 / 3.0;
            let fp = s.iter().zip(&y).filter(|(&v, &l)| v >= t && l == 0).count() as f64 / 3.0;
            if tp - fp > best.0 {
                best = (tp - fp, t);
            }
        }
        assert_eq!(r.cutoff, best.1);
        assert!((r.youden - best.0).abs() < 1e-15);
        // Mann-Whitney: pairs (pos, neg) with pos > neg.
        let pairs = [0.7, 0.9, 0.4]
            .iter()
            .map(|p| [0.3, 0.2, 0.5].iter().filter(|&&n| *p > n).count())
            .sum::<usize>();
        assert!((r.auc - pairs as f64 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn roc_single_class() {
        assert!(matches!(roc_cutoff(&[0.1, 0.2], &[1, 1]), Err(Error::SingleClass)));
    }

    #[test]
    fn ari_cases() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[5, 5, 2, 2]).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&[0, 1, 2, 3], &[0, 0, 0, 0]).unwrap(), 0.0);
        // Contingency [[2,1],[1,2]]: index 2, row/col sums 3 each (3 pairs),
        // total C(6,2) = 15, expected 36/15, max 6.
        let a = [0, 0, 0, 1, 1, 1];
        let b = [0, 0, 1, 0, 1, 1];
        let want = (2.0 - 36.0 / 15.0) / (6.0 - 36.0 / 15.0);
        assert!((adjusted_rand_index(&a, &b).unwrap() - want).abs() < 1e-15);
        assert!(adjusted_rand_index(&[0], &[0, 1]).is_err());
    }

    proptest! {
        #[test]
        fn ari_symmetric_and_label_invariant(
            a in proptest::collection::vec(0usize..4, 2..60),
            seed in proptest::collection::vec(0usize..4, 60),
            perm_shift in 1usize..4,
        ) {
            let b: Vec<usize> = seed[..a.len()].to_vec();
            let x = adjusted_rand_index(&a, &b).unwrap();
            let y = adjusted_rand_index(&b, &a).unwrap();
            prop_assert!((x - y).abs() < 1e-12);
            let relabeled: Vec<usize> = a.iter().map(|&k| (k + perm_shift) % 4 + 10).collect();
            let z = adjusted_rand_index(&relabeled, &b).unwrap();
            prop_assert!((x - z).abs() < 1e-12);
            prop_assert!(x <= 1.0 + 1e-12);
        }

        #[test]
        fn auc_is_mann_whitney(scores in proptest::collection::hash_set(0u32..100_000, 4..80), flips in proptest::collection::vec(any::<bool>(), 80)) {
            let s: Vec<f64> = scores.into_iter().map(|v| v as f64 / 1e5).collect();
            let mut y: Vec<u8> = (0..s.len()).map(|i| u8::from(flips[i])).collect();
            y[0] = 1;
            y[1] = 0;
            let r = roc_cutoff(&s, &y).unwrap();
            let (mut u, mut n1, mut n0) = (0.0, 0.0, 0.0);
            for i in 0..s.len() {
                if y[i] == 1 { n1 += 1.0 } else { n0 += 1.0 }
                for j in 0..s.len() {
                    if y[i] == 1 && y[j] == 0 && s[i] > s[j] {
                        u += 1.0;
                    }
                }
            }
            prop_assert!((r.auc - u / (n1 * n0)).abs() < 1e-10);
        }
    }
}

//! Metrics and factor diagnostics: held-out perplexity, Precision@1,
//! factor usage summaries, and planted-factor recovery scoring.

use std::path::Path;

use rand::Rng;
use serde::Serialize;

use crate::data::{CountMatrix, HeldoutSplit, Vocab};
use crate::error::{Error, Result};
use crate::generative::{GroundTruth, HyperParams};
use crate::inference::{perplexity_core, transform, GlobalState, LocalState};
use crate::store;

/// Headline metrics of one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalResult {
    /// exp(-mean log-likelihood) per held-out token; smaller is better,
    /// >= 1 for normalized predictives.
    pub perplexity: f64,
    /// Exact-match rate of the rounded predictive count on one designated
    /// held-out feature per test sample.
    pub precision_at_1: f64,
    /// Summed target log-likelihood per test sample.
    pub per_sample_log_lik: Vec<f64>,
    /// Precision@1 within token-load bins (deciles of total sample load).
    pub precision_bins: Vec<TmlBin>,
}

/// One token-load bin of the Precision@1 curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TmlBin {
    pub lo: u64,
    pub hi: u64,
    pub samples: usize,
    pub precision: f64,
}

/// Word-level predictive perplexity on a held-out split: local states are
/// re-inferred from the observed half under frozen globals, each target
/// token is scored by the intensity-weighted mixture of mean factor rows,
/// and the result is exp(-mean log-likelihood).
pub fn heldout_perplexity(
    split: &HeldoutSplit,
    globals: &GlobalState,
    hyper: &HyperParams,
    iters: usize,
    tol: f64,
) -> Result<(f64, Vec<f64>)> {
    perplexity_core(&split.test_observed, &split.test_target, globals, hyper, iters, tol)
}

/// Predictive mean count for every feature of every test sample:
/// `E[n_jm] = sum_k E[theta_jk] E[phi_km]`.
pub fn predictive_mean_counts(
    observed: &CountMatrix,
    globals: &GlobalState,
    hyper: &HyperParams,
    iters: usize,
    tol: f64,
) -> Result<Vec<Vec<f64>>> {
    let locals = transform(observed, globals, hyper, iters, tol)?;
    let phi = globals.phi_mean();
    let mut out = Vec::with_capacity(locals.len());
    for local in &locals {
        let theta = local.theta_mean();
        let mut row = vec![0.0; globals.m];
        for k in 0..globals.k {
            let t = theta[k];
            if t > 0.0 {
                for m in 0..globals.m {
                    row[m] += t * phi[k][m];
                }
            }
        }
        out.push(row);
    }
    Ok(out)
}

/// Precision@1 against explicit predictions: for each test sample one
/// held-out feature is designated (drawn among its target entries, or any
/// feature — held out with count zero — when the sample has no target
/// entries) and scored as round(prediction) == stored count.
///
/// Returns the overall match rate and the token-load-binned curve.
pub fn precision_from_predictions(
    predictions: &[Vec<f64>],
    split: &HeldoutSplit,
    rng: &mut impl Rng,
) -> Result<(f64, Vec<TmlBin>)> {
    let n = split.test_target.n_samples();
    if n == 0 {
        return Err(Error::data("precision@1 needs at least one designated target"));
    }
    if predictions.len() != n {
        return Err(Error::config(format!(
            "precision@1: {} prediction rows for {} test samples",
            predictions.len(),
            n
        )));
    }
    let m_n = split.test_observed.n_features();
    let mut hits = Vec::with_capacity(n);
    let mut loads = Vec::with_capacity(n);
    for j in 0..n {
        let target_row = split.test_target.row(j);
        let (feature, truth) = if target_row.is_empty() {
            (rng.random_range(0..m_n), 0u32)
        } else {
            let pick = rng.random_range(0..target_row.len());
            target_row[pick]
        };
        let predicted = predictions[j][feature].round();
        hits.push(predicted == f64::from(truth));
        loads.push(split.test_observed.total(j) + split.test_target.total(j));
    }
    let rate = hits.iter().filter(|&&h| h).count() as f64 / n as f64;

    // Decile bins over sample token load.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&j| (loads[j], j));
    let bins_n = 10.min(n);
    let mut bins = Vec::with_capacity(bins_n);
    for b in 0..bins_n {
        let lo_i = b * n / bins_n;
        let hi_i = (b + 1) * n / bins_n;
        let part = &order[lo_i..hi_i];
        if part.is_empty() {
            continue;
        }
        let hit = part.iter().filter(|&&j| hits[j]).count();
        bins.push(TmlBin {
            lo: loads[part[0]],
            hi: loads[*part.last().unwrap()],
            samples: part.len(),
            precision: hit as f64 / part.len() as f64,
        });
    }
    Ok((rate, bins))
}

/// End-to-end Precision@1: infer locals from the observed half, build
/// predictive mean counts, and score designated targets.
pub fn precision_at_1(
    split: &HeldoutSplit,
    globals: &GlobalState,
    hyper: &HyperParams,
    iters: usize,
    tol: f64,
    rng: &mut impl Rng,
) -> Result<(f64, Vec<TmlBin>)> {
    let predictions =
        predictive_mean_counts(&split.test_observed, globals, hyper, iters, tol)?;
    precision_from_predictions(&predictions, split, rng)
}

/// Full evaluation of a fitted state on a held-out split.
pub fn evaluate(
    split: &HeldoutSplit,
    globals: &GlobalState,
    hyper: &HyperParams,
    iters: usize,
    tol: f64,
    rng: &mut impl Rng,
) -> Result<EvalResult> {
    let (perplexity, per_sample_log_lik) =
        heldout_perplexity(split, globals, hyper, iters, tol)?;
    let (precision, bins) = precision_at_1(split, globals, hyper, iters, tol, rng)?;
    Ok(EvalResult { perplexity, precision_at_1: precision, per_sample_log_lik, precision_bins: bins })
}

// --- Factor diagnostics ---

/// One feature of a factor's top list.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopFeature {
    pub feature: String,
    pub weight: f64,
}

/// Summary of one factor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FactorSummary {
    pub factor: usize,
    /// Top features by posterior mean weight, descending.
    pub top_features: Vec<TopFeature>,
    /// Summed selector probability across samples (in [0, J]).
    pub usage: f64,
    /// Summed posterior mean intensity across samples.
    pub expected_mass: f64,
}

/// Occurrence count of a factor within one label group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelOccurrence {
    pub label: String,
    pub factor: usize,
    pub count: u64,
}

/// Per-sample token load and the set of factors switched on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleActivity {
    pub sample: String,
    pub token_load: u64,
    pub active_factors: Vec<usize>,
}

/// Factor diagnostics over a fitted corpus.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FactorReport {
    pub factors: Vec<FactorSummary>,
    /// Per-label factor occurrence counts; absent when no sample carries
    /// a label.
    pub label_occurrence: Option<Vec<LabelOccurrence>>,
    pub sample_activity: Vec<SampleActivity>,
}

/// A factor counts as occurring in a sample when its selector probability
/// exceeds this (the maximum-a-posteriori reading of the Bernoulli).
pub const OCCURRENCE_THRESHOLD: f64 = 0.5;

/// Build factor diagnostics for a fitted corpus. `top` bounds the
/// per-factor feature list and must not exceed the vocabulary size.
pub fn factor_report(
    globals: &GlobalState,
    locals: &[LocalState],
    corpus: &CountMatrix,
    vocab: &Vocab,
    top: usize,
) -> Result<FactorReport> {
    if top > globals.m {
        return Err(Error::config(format!(
            "top-{top} features requested from a {}-feature vocabulary",
            globals.m
        )));
    }
    if locals.len() != corpus.n_samples() || vocab.len() != globals.m {
        return Err(Error::config("factor report inputs cover different corpora"));
    }
    let phi = globals.phi_mean();
    let mut factors = Vec::with_capacity(globals.k);
    for k in 0..globals.k {
        let mut idx: Vec<usize> = (0..globals.m).collect();
        idx.sort_by(|&a, &b| {
            phi[k][b].partial_cmp(&phi[k][a]).unwrap().then(a.cmp(&b))
        });
        let top_features = idx[..top]
            .iter()
            .map(|&m| TopFeature { feature: vocab.entries()[m].clone(), weight: phi[k][m] })
            .collect();
        let usage: f64 = locals.iter().map(|l| l.nu[k]).sum();
        let expected_mass: f64 = locals.iter().map(|l| l.theta1[k] * l.theta2[k]).sum();
        factors.push(FactorSummary { factor: k, top_features, usage, expected_mass });
    }

    let mut labels: Vec<&str> = corpus
        .labels()
        .iter()
        .flatten()
        .map(|s| s.as_str())
        .collect();
    labels.sort_unstable();
    labels.dedup();
    let label_occurrence = if labels.is_empty() {
        None
    } else {
        let mut rows = Vec::new();
        for label in labels {
            for k in 0..globals.k {
                let count = locals
                    .iter()
                    .zip(corpus.labels())
                    .filter(|(l, lab)| {
                        lab.as_deref() == Some(label) && l.nu[k] > OCCURRENCE_THRESHOLD
                    })
                    .count() as u64;
                rows.push(LabelOccurrence { label: label.to_string(), factor: k, count });
            }
        }
        Some(rows)
    };

    let sample_activity = locals
        .iter()
        .enumerate()
        .map(|(j, l)| SampleActivity {
            sample: corpus.sample_ids()[j].clone(),
            token_load: corpus.total(j),
            active_factors: (0..globals.k)
                .filter(|&k| l.nu[k] > OCCURRENCE_THRESHOLD)
                .collect(),
        })
        .collect();

    Ok(FactorReport { factors, label_occurrence, sample_activity })
}

/// Number of factors holding more than `frac` of the total expected
/// intensity — the shrinkage diagnostic. Selector probabilities are no
/// use here: a factor whose rate has collapsed carries no data terms, so
/// its selectors drift to the (uninformative) prior rather than to zero,
/// while its share of expected mass does vanish.
pub fn active_factor_count(locals: &[LocalState], k: usize, frac: f64) -> usize {
    let mut mass = vec![0.0; k];
    for local in locals {
        for (m, t) in mass.iter_mut().zip(local.theta_mean()) {
            *m += t;
        }
    }
    let total: f64 = mass.iter().sum();
    if total <= 0.0 {
        return 0;
    }
    mass.iter().filter(|&&m| m > frac * total).count()
}

/// Write the report's flat tables: `factors.tsv` (factor_id, feature,
/// weight), `labels.tsv` (label, factor_id, count) when labels exist, and
/// `activity.tsv` (sample, token_load, active factor ids).
pub fn write_factor_report_tables(report: &FactorReport, dir: &Path) -> Result<()> {
    let mut factors = String::from("factor_id\tfeature\tweight\n");
    for f in &report.factors {
        for t in &f.top_features {
            factors.push_str(&format!("{}\t{}\t{:.12e}\n", f.factor, t.feature, t.weight));
        }
    }
    let fpath = dir.join("factors.tsv");
    std::fs::write(&fpath, factors).map_err(|e| Error::io(&fpath, e))?;

    if let Some(rows) = &report.label_occurrence {
        let mut out = String::from("label\tfactor_id\tcount\n");
        for r in rows {
            out.push_str(&format!("{}\t{}\t{}\n", r.label, r.factor, r.count));
        }
        let lpath = dir.join("labels.tsv");
        std::fs::write(&lpath, out).map_err(|e| Error::io(&lpath, e))?;
    }

    let mut act = String::from("sample\ttoken_load\tactive_factors\n");
    for s in &report.sample_activity {
        let ids: Vec<String> = s.active_factors.iter().map(|k| k.to_string()).collect();
        act.push_str(&format!("{}\t{}\t{}\n", s.sample, s.token_load, ids.join(",")));
    }
    let apath = dir.join("activity.tsv");
    std::fs::write(&apath, act).map_err(|e| Error::io(&apath, e))?;
    Ok(())
}

/// Serialize an [`EvalResult`] and a [`FactorReport`] as JSON.
pub fn write_eval_json(result: &EvalResult, path: &Path) -> Result<()> {
    store::write_json(path, result)
}

pub fn write_report_json(report: &FactorReport, path: &Path) -> Result<()> {
    store::write_json(path, report)
}

// --- Planted-factor recovery ---

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    let na: f64 = a.iter().map(|&x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&y| y * y).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Exact minimum-cost assignment on a square matrix (shortest augmenting
/// paths with potentials, cubic time). Returns the column assigned to
/// each row.
fn hungarian_min(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut matched = vec![0usize; n + 1]; // matched[j] = row occupying column j (1-based)
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched[j0] = matched[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        if matched[j] > 0 {
            row_to_col[matched[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Optimal one-to-one matching of two factor-row sets by cosine: the
/// smaller set is matched into the larger, maximizing the summed cosine.
/// Returns the mean matched cosine and, for each row of the smaller set,
/// the index of its partner in the larger set. The score is symmetric in
/// the arguments.
pub fn match_factors(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<(f64, Vec<usize>)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::config("factor matching needs nonempty row sets"));
    }
    let dim = a[0].len();
    if a.iter().chain(b.iter()).any(|r| r.len() != dim) {
        return Err(Error::config("factor matching: rows have mixed dimensions"));
    }
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let n = large.len();
    // Pad with zero-cosine phantom rows to square; phantoms absorb the
    // unmatched columns without disturbing real rows.
    let mut cost = vec![vec![0.0; n]; n];
    for (i, row) in small.iter().enumerate() {
        for (j, col) in large.iter().enumerate() {
            cost[i][j] = -cosine(row, col);
        }
    }
    let assignment = hungarian_min(&cost);
    let mut total = 0.0;
    let mut perm = Vec::with_capacity(small.len());
    for (i, &j) in assignment.iter().take(small.len()).enumerate() {
        total += -cost[i][j];
        perm.push(j);
    }
    Ok((total / small.len() as f64, perm))
}

/// Score how well the fitted factor rows recover planted ones: mean
/// cosine over the optimal assignment of planted rows to fitted rows,
/// plus the assignment itself.
pub fn recovery_score(globals: &GlobalState, truth: &GroundTruth) -> Result<(f64, Vec<usize>)> {
    let fitted = globals.phi_mean();
    if truth.phi.is_empty() {
        return Err(Error::config("ground truth carries no factor rows"));
    }
    if truth.phi.len() > fitted.len() {
        return Err(Error::config(format!(
            "recovery needs at least as many fitted factors ({}) as planted ones ({})",
            fitted.len(),
            truth.phi.len()
        )));
    }
    if truth.phi[0].len() != globals.m {
        return Err(Error::config(format!(
            "recovery dimension mismatch: truth over {} features, model over {}",
            truth.phi[0].len(),
            globals.m
        )));
    }
    match_factors(&truth.phi, &fitted)
}

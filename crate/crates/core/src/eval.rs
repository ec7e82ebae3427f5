//! Retrieval metrics, linear-probe classification and the overall score.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::{embed_all, exact_search, Embedder, Embedding, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::query::{QrelSet, Query};
use crate::util::rng_for;

pub const CUTOFFS: [usize; 6] = [1, 5, 10, 20, 50, 100];
pub const MAX_CLASSES: usize = 50;
pub const MAX_CLASS_RATIO: f64 = 0.1;
pub const DEFAULT_TEST_FRACTION: f64 = 0.2;
pub const SPLIT_SEED: u64 = 42;

pub fn mrr_at_k<S: AsRef<str>>(ranked: &[S], relevant: &BTreeSet<String>, k: usize) -> f64 {
    ranked
        .iter()
        .take(k)
        .position(|d| relevant.contains(d.as_ref()))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

/// Binary-relevance nDCG with the ideal ranking placing
/// `min(|relevant|, k)` hits on top.
pub fn ndcg_at_k<S: AsRef<str>>(ranked: &[S], relevant: &BTreeSet<String>, k: usize) -> f64 {
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, d)| relevant.contains(d.as_ref()))
        .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
        .sum();
    let ideal: f64 = (0..relevant.len().min(k)).map(|i| 1.0 / ((i + 2) as f64).log2()).sum();
    if ideal == 0.0 {
        0.0
    } else {
        dcg / ideal
    }
}

fn hits_at<S: AsRef<str>>(ranked: &[S], relevant: &BTreeSet<String>, k: usize) -> usize {
    ranked.iter().take(k).filter(|d| relevant.contains(d.as_ref())).count()
}

pub fn recall_at_k<S: AsRef<str>>(ranked: &[S], relevant: &BTreeSet<String>, k: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    hits_at(ranked, relevant, k) as f64 / relevant.len() as f64
}

pub fn precision_at_k<S: AsRef<str>>(ranked: &[S], relevant: &BTreeSet<String>, k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    hits_at(ranked, relevant, k) as f64 / k as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellScore {
    pub queries: usize,
    pub ndcg_at_10: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub queries: usize,
    pub skipped: usize,
    pub mrr_at_10: f64,
    pub ndcg_at_10: f64,
    pub recall: BTreeMap<usize, f64>,
    pub precision: BTreeMap<usize, f64>,
    /// Keyed by `"{type}/{k}"`.
    pub breakdown: BTreeMap<String, CellScore>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryScores {
    pub mrr_at_10: f64,
    pub ndcg_at_10: f64,
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
}

pub fn score_ranking<S: AsRef<str>>(ranked: &[S], relevant: &BTreeSet<String>) -> QueryScores {
    QueryScores {
        mrr_at_10: mrr_at_k(ranked, relevant, 10),
        ndcg_at_10: ndcg_at_k(ranked, relevant, 10),
        recall: CUTOFFS.iter().map(|&k| recall_at_k(ranked, relevant, k)).collect(),
        precision: CUTOFFS.iter().map(|&k| precision_at_k(ranked, relevant, k)).collect(),
    }
}

/// Aggregates per-query scores in query order.
pub fn aggregate(queries: &[&Query], scores: &[QueryScores], skipped: usize) -> RetrievalReport {
    let n = scores.len().max(1) as f64;
    let mean = |f: &dyn Fn(&QueryScores) -> f64| scores.iter().map(f).sum::<f64>() / n;
    let mut cells: BTreeMap<String, (usize, f64)> = BTreeMap::new();
    for (q, s) in queries.iter().zip(scores) {
        let c = cells.entry(format!("{}/{}", q.qtype, q.k)).or_default();
        c.0 += 1;
        c.1 += s.ndcg_at_10;
    }
    RetrievalReport {
        queries: scores.len(),
        skipped,
        mrr_at_10: mean(&|s| s.mrr_at_10),
        ndcg_at_10: mean(&|s| s.ndcg_at_10),
        recall: CUTOFFS.iter().enumerate().map(|(i, &k)| (k, mean(&|s| s.recall[i]))).collect(),
        precision: CUTOFFS
            .iter()
            .enumerate()
            .map(|(i, &k)| (k, mean(&|s| s.precision[i])))
            .collect(),
        breakdown: cells
            .into_iter()
            .map(|(k, (n, sum))| {
                (
                    k,
                    CellScore {
                        queries: n,
                        ndcg_at_10: sum / n as f64,
                    },
                )
            })
            .collect(),
    }
}

/// Exact search for every query against an already-embedded corpus.
pub fn eval_retrieval(
    embedder: &dyn Embedder,
    corpus: &EmbeddingMatrix,
    queries: &[Query],
    qrels: &QrelSet,
) -> Result<RetrievalReport> {
    for q in queries {
        if qrels.get(&q.qid).is_none() {
            return Err(Error::DataConsistency(format!("no qrels for {}", q.qid)));
        }
    }
    let texts: Vec<&str> = queries.iter().map(|q| q.text.as_str()).collect();
    let embedded: Vec<Option<Embedding>> = match embed_all(embedder, &texts, 256) {
        Ok(v) => v.into_iter().map(Some).collect(),
        Err(e) => {
            log::warn!("batch query embedding failed ({e}); retrying one by one");
            texts
                .iter()
                .map(|t| embedder.embed_texts(&[t]).ok().and_then(|mut v| v.pop()))
                .collect()
        }
    };
    let depth = *CUTOFFS.last().expect("non-empty");
    let results: Vec<Option<QueryScores>> = queries
        .par_iter()
        .zip(embedded.par_iter())
        .map(|(q, e)| {
            let e = e.as_ref()?;
            let hits = exact_search(e, corpus, depth).ok()?;
            let ranked: Vec<&str> = hits.iter().map(|(i, _)| corpus.doc_ids[*i].as_str()).collect();
            Some(score_ranking(&ranked, qrels.get(&q.qid).expect("checked")))
        })
        .collect();
    let mut kept_q = Vec::new();
    let mut kept_s = Vec::new();
    let mut skipped = 0;
    for (q, r) in queries.iter().zip(results) {
        match r {
            Some(s) => {
                kept_q.push(q);
                kept_s.push(s);
            }
            None => skipped += 1,
        }
    }
    Ok(aggregate(&kept_q, &kept_s, skipped))
}

/// Per-class split with `round(n·f)` test items clamped to `[1, n−1]`.
/// Classes with fewer than two items are dropped.
pub fn stratified_split(labels: &[String], test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Argument(format!("test_fraction {test_fraction} outside (0, 1)")));
    }
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = rng_for(seed, "stratified-split");
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, mut idx) in by_class {
        let n = idx.len();
        if n < 2 {
            log::warn!("class `{class}` has {n} sample(s); dropped from the split");
            continue;
        }
        idx.shuffle(&mut rng);
        let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    if train.is_empty() {
        return Err(Error::Split("every class has fewer than two samples".into()));
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    /// Inverse regularization strength on the weights (bias unpenalized).
    pub c: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            c: 1.0,
            max_iter: 1000,
            tol: 1e-6,
        }
    }
}

/// Multinomial logistic regression weights; row `k` is `[w_k…, b_k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub classes: Vec<String>,
    pub dim: usize,
    pub theta: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl Probe {
    fn logits(&self, x: &[f64]) -> Vec<f64> {
        let stride = self.dim + 1;
        (0..self.classes.len())
            .map(|k| {
                let row = &self.theta[k * stride..(k + 1) * stride];
                row[..self.dim].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + row[self.dim]
            })
            .collect()
    }

    /// Arg-max class; ties go to the earlier class.
    pub fn predict(&self, x: &[f64]) -> &str {
        let l = self.logits(x);
        let mut best = 0;
        for k in 1..l.len() {
            if l[k] > l[best] {
                best = k;
            }
        }
        &self.classes[best]
    }
}

/// `½‖W‖² + C·Σ CE` and its gradient.
fn probe_objective(theta: &[f64], xs: &[Vec<f64>], ys: &[usize], k: usize, dim: usize, c: f64) -> (f64, Vec<f64>) {
    let stride = dim + 1;
    let mut f = 0.0;
    let mut g = vec![0.0; theta.len()];
    for kk in 0..k {
        for j in 0..dim {
            let w = theta[kk * stride + j];
            f += 0.5 * w * w;
            g[kk * stride + j] = w;
        }
    }
    let mut logits = vec![0.0; k];
    for (x, &y) in xs.iter().zip(ys) {
        for (kk, l) in logits.iter_mut().enumerate() {
            let row = &theta[kk * stride..(kk + 1) * stride];
            *l = row[..dim].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + row[dim];
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        f += c * (max + z.ln() - logits[y]);
        for (kk, l) in logits.iter().enumerate() {
            let p = (l - max).exp() / z - if kk == y { 1.0 } else { 0.0 };
            let row = &mut g[kk * stride..(kk + 1) * stride];
            for j in 0..dim {
                row[j] += c * p * x[j];
            }
            row[dim] += c * p;
        }
    }
    (f, g)
}

fn vdot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// L-BFGS (history 10) with Armijo backtracking from a zero start. Stops
/// when the largest gradient component drops below `tol`.
pub fn train_probe(xs: &[Vec<f64>], labels: &[String], cfg: &ProbeConfig) -> Result<Probe> {
    if xs.len() != labels.len() {
        return Err(Error::LengthMismatch(xs.len(), labels.len()));
    }
    let classes: Vec<String> = labels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if classes.len() < 2 {
        return Err(Error::Argument("probe needs at least two classes".into()));
    }
    let dim = xs[0].len();
    if let Some(bad) = xs.iter().find(|x| x.len() != dim) {
        return Err(Error::Dimension(dim, bad.len()));
    }
    let ys: Vec<usize> = labels
        .iter()
        .map(|l| classes.binary_search(l).expect("collected"))
        .collect();
    let k = classes.len();
    let obj = |t: &[f64]| probe_objective(t, xs, &ys, k, dim, cfg.c);
    let mut theta = vec![0.0; k * (dim + 1)];
    let (mut f, mut g) = obj(&theta);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    const HISTORY: usize = 10;
    while iterations < cfg.max_iter {
        if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) < cfg.tol {
            converged = true;
            break;
        }
        iterations += 1;
        // Two-loop recursion.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(s_hist.len());
        for (s, y) in s_hist.iter().zip(&y_hist).rev() {
            let rho = 1.0 / vdot(y, s);
            let a = rho * vdot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push((a, rho));
        }
        let gamma = match (s_hist.last(), y_hist.last()) {
            (Some(s), Some(y)) => vdot(s, y) / vdot(y, y),
            _ => 1.0 / g.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0),
        };
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y), (a, rho)) in s_hist.iter().zip(&y_hist).zip(alphas.into_iter().rev()) {
            let b = rho * vdot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = vdot(&g, &dir);
        if slope >= 0.0 {
            dir = g.iter().map(|v| -v).collect();
            slope = vdot(&g, &dir);
            s_hist.clear();
            y_hist.clear();
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = theta.iter().zip(&dir).map(|(t, d)| t + step * d).collect();
            let (fc, gc) = obj(&cand);
            if fc.is_finite() && fc <= f + 1e-4 * step * slope {
                accepted = Some((cand, fc, gc));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, fc, gc)) = accepted else {
            break;
        };
        let s: Vec<f64> = cand.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gc.iter().zip(&g).map(|(a, b)| a - b).collect();
        if vdot(&s, &y) > 1e-12 {
            if s_hist.len() == HISTORY {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
        }
        let progress = (f - fc).abs();
        theta = cand;
        f = fc;
        g = gc;
        if progress == 0.0 {
            break;
        }
    }
    Ok(Probe {
        classes,
        dim,
        theta,
        iterations,
        converged,
    })
}

/// Macro-F1 over the classes present in `truth`.
pub fn macro_f1(truth: &[String], pred: &[String]) -> f64 {
    let classes: BTreeSet<&String> = truth.iter().collect();
    if classes.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for c in &classes {
        let tp = truth.iter().zip(pred).filter(|(t, p)| t == c && p == c).count() as f64;
        let fp = truth.iter().zip(pred).filter(|(t, p)| t != c && p == c).count() as f64;
        let fn_ = truth.iter().zip(pred).filter(|(t, p)| t == c && p != c).count() as f64;
        let prec = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let rec = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        total += if prec + rec > 0.0 { 2.0 * prec * rec / (prec + rec) } else { 0.0 };
    }
    total / classes.len() as f64
}

pub fn accuracy(truth: &[String], pred: &[String]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    truth.iter().zip(pred).filter(|(t, p)| t == p).count() as f64 / truth.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassDataset {
    pub dataset_id: String,
    pub embeddings: Vec<Vec<f64>>,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetScore {
    pub dataset_id: String,
    pub samples: usize,
    pub classes: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedDataset {
    pub dataset_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub datasets: Vec<DatasetScore>,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub skipped: Vec<SkippedDataset>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassFilters {
    pub max_classes: usize,
    pub max_ratio: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for ClassFilters {
    fn default() -> Self {
        ClassFilters {
            max_classes: MAX_CLASSES,
            max_ratio: MAX_CLASS_RATIO,
            test_fraction: DEFAULT_TEST_FRACTION,
            seed: SPLIT_SEED,
        }
    }
}

/// Filter reason for a dataset, if any.
pub fn filter_reason(n: usize, classes: usize, f: &ClassFilters) -> Option<&'static str> {
    if classes > f.max_classes {
        Some("cardinality")
    } else if n == 0 || classes as f64 / n as f64 > f.max_ratio {
        Some("ratio")
    } else {
        None
    }
}

pub fn eval_classification(datasets: &[ClassDataset], filters: &ClassFilters) -> Result<ClassificationReport> {
    let results: Vec<Result<std::result::Result<DatasetScore, SkippedDataset>>> = datasets
        .par_iter()
        .map(|ds| {
            if ds.embeddings.len() != ds.labels.len() {
                return Err(Error::LengthMismatch(ds.embeddings.len(), ds.labels.len()));
            }
            let skip = |reason: &str| {
                log::info!("classification: skipping `{}` ({reason})", ds.dataset_id);
                Ok(Err(SkippedDataset {
                    dataset_id: ds.dataset_id.clone(),
                    reason: reason.to_string(),
                }))
            };
            let classes = ds.labels.iter().collect::<BTreeSet<_>>().len();
            if let Some(r) = filter_reason(ds.labels.len(), classes, filters) {
                return skip(r);
            }
            let (train, test) = match stratified_split(&ds.labels, filters.test_fraction, filters.seed) {
                Ok(s) => s,
                Err(Error::Split(_)) => return skip("split"),
                Err(e) => return Err(e),
            };
            let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<String>) {
                idx.iter().map(|&i| (ds.embeddings[i].clone(), ds.labels[i].clone())).unzip()
            };
            let (xtr, ytr) = pick(&train);
            let (xte, yte) = pick(&test);
            if ytr.iter().collect::<BTreeSet<_>>().len() < 2 {
                return skip("single class");
            }
            let probe = train_probe(&xtr, &ytr, &ProbeConfig::default())?;
            let pred: Vec<String> = xte.iter().map(|x| probe.predict(x).to_string()).collect();
            Ok(Ok(DatasetScore {
                dataset_id: ds.dataset_id.clone(),
                samples: ds.labels.len(),
                classes,
                accuracy: accuracy(&yte, &pred),
                macro_f1: macro_f1(&yte, &pred),
            }))
        })
        .collect();
    let mut scored = Vec::new();
    let mut skipped = Vec::new();
    for r in results {
        match r? {
            Ok(s) => scored.push(s),
            Err(s) => skipped.push(s),
        }
    }
    if scored.is_empty() {
        return Err(Error::EmptyReport);
    }
    let n = scored.len() as f64;
    Ok(ClassificationReport {
        accuracy: scored.iter().map(|s| s.accuracy).sum::<f64>() / n,
        macro_f1: scored.iter().map(|s| s.macro_f1).sum::<f64>() / n,
        datasets: scored,
        skipped,
    })
}

pub fn embeddings_to_f64(e: &[Embedding]) -> Vec<Vec<f64>> {
    e.iter().map(|v| v.0.iter().map(|&x| f64::from(x)).collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverallReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub mrr_at_10: f64,
    pub ndcg_at_10: f64,
    pub overall: f64,
}

pub fn overall_of(accuracy: f64, macro_f1: f64, mrr: f64, ndcg: f64) -> OverallReport {
    OverallReport {
        accuracy,
        macro_f1,
        mrr_at_10: mrr,
        ndcg_at_10: ndcg,
        overall: (accuracy + macro_f1 + mrr + ndcg) / 4.0,
    }
}

pub fn overall(cls: &ClassificationReport, ret: &RetrievalReport) -> OverallReport {
    overall_of(cls.accuracy, cls.macro_f1, ret.mrr_at_10, ret.ndcg_at_10)
}

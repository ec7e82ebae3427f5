//! Diagnostics: numeric sensitivity, noise-column robustness, template
//! robustness and cluster separation.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use crate::embed::{cosine, embed_all, embed_documents, exact_search, Embedder, Embedding, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::eval::{aggregate, eval_retrieval, score_ranking, QueryScores, RetrievalReport, CUTOFFS};
use crate::query::{render_query, satisfies, Constraint, Op, QrelSet, Query, Template};
use crate::table::{clause, format_number, normalize_value, CellValue, Corpus, DocCell, Document, Table};
use crate::util::rng_for;

/// Average ranks, 1-based; ties share the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
    }
}

/// Pearson correlation of average ranks; 0 when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(Error::Argument("spearman needs at least two points".into()));
    }
    Ok(pearson(&average_ranks(a), &average_ranks(b)))
}

pub const GRID_POINTS: usize = 101;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCase {
    pub id: String,
    pub column: String,
    pub op: Op,
    pub threshold: f64,
    pub grid: Vec<f64>,
    /// Extra clauses appended after the varying one.
    pub context: Vec<String>,
}

impl SensitivityCase {
    /// Case with a 101-point grid spanning `[lo, hi]`.
    pub fn linear(id: &str, column: &str, op: Op, threshold: f64, lo: f64, hi: f64) -> Result<SensitivityCase> {
        if !(lo < threshold && threshold < hi) {
            return Err(Error::Argument(format!(
                "grid [{lo}, {hi}] does not straddle threshold {threshold}"
            )));
        }
        let grid = (0..GRID_POINTS)
            .map(|i| lo + (hi - lo) * i as f64 / (GRID_POINTS - 1) as f64)
            .collect();
        Ok(SensitivityCase {
            id: id.to_string(),
            column: column.to_string(),
            op,
            threshold,
            grid,
            context: Vec::new(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.len() != GRID_POINTS || self.grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Argument(format!("case {}: grid must be 101 ascending values", self.id)));
        }
        if self.op == Op::Eq {
            return Err(Error::Argument(format!("case {}: needs an inequality", self.id)));
        }
        let (lo, hi) = (self.grid[0], self.grid[GRID_POINTS - 1]);
        if !(lo < self.threshold && self.threshold < hi) {
            return Err(Error::Argument(format!("case {}: grid does not straddle threshold", self.id)));
        }
        Ok(())
    }

    pub fn constraint(&self) -> Constraint {
        Constraint::numeric(&self.column, self.op, self.threshold)
    }

    pub fn query_text(&self) -> String {
        render_query(&[self.constraint()], Template::T1)
    }

    /// Candidate documents with the grid value rendered at two decimals, so
    /// the truth series is computed on what the text shows.
    pub fn candidates(&self) -> Vec<Document> {
        self.grid
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let shown = CellValue::Number(v).canonical(2);
                let mut text = clause(&self.column, &normalize_value(&shown, 2));
                for c in &self.context {
                    text.push(' ');
                    text.push_str(c);
                }
                Document {
                    doc_id: format!("{}:{i}", self.id),
                    dataset_id: self.id.clone(),
                    source_row: i,
                    text,
                    cells: vec![DocCell {
                        name: self.column.clone(),
                        value: shown,
                    }],
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityResult {
    pub case_id: String,
    pub rho: f64,
    pub similarity: Vec<f64>,
    pub truth: Vec<bool>,
}

pub fn numeric_sensitivity(embedder: &dyn Embedder, case: &SensitivityCase) -> Result<SensitivityResult> {
    case.validate()?;
    let q = embed_all(embedder, &[case.query_text().as_str()], 1)?.remove(0);
    let docs = case.candidates();
    let texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
    let embs = embed_all(embedder, &texts, 128)?;
    let similarity: Vec<f64> = embs.iter().map(|e| cosine(&q, e)).collect::<Result<_>>()?;
    let constraint = [case.constraint()];
    let truth: Vec<bool> = docs.iter().map(|d| satisfies(d, &constraint)).collect();
    let t: Vec<f64> = truth.iter().map(|&b| f64::from(u8::from(b))).collect();
    Ok(SensitivityResult {
        case_id: case.id.clone(),
        rho: spearman(&similarity, &t)?,
        similarity,
        truth,
    })
}

/// Paired greater-than / less-than cases for numeric columns of the corpus:
/// threshold at the column median rounded to two decimals, grid from the
/// column minimum to its maximum. Columns are visited in name order and
/// only those with at least 20 distinct values are used.
pub fn default_cases(corpus: &Corpus, max_columns: usize) -> Vec<SensitivityCase> {
    let mut values: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for d in &corpus.documents {
        for c in &d.cells {
            if let CellValue::Number(v) = c.value {
                values.entry(c.name.as_str()).or_default().push(v);
            }
        }
    }
    let mut cases = Vec::new();
    for (col, mut v) in values {
        if cases.len() >= 2 * max_columns {
            break;
        }
        v.sort_by(f64::total_cmp);
        v.dedup();
        if v.len() < 20 {
            continue;
        }
        let (lo, hi) = (v[0], v[v.len() - 1]);
        let mid = crate::table::round_to(v[v.len() / 2], 2);
        for op in [Op::Gt, Op::Lt] {
            let tag = if op == Op::Gt { "gt" } else { "lt" };
            if let Ok(c) = SensitivityCase::linear(&format!("{col}-{tag}"), col, op, mid, lo, hi) {
                cases.push(c);
            }
        }
    }
    cases
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisePlan {
    pub levels: Vec<usize>,
    pub seed: u64,
}

pub const MAX_NOISE: usize = 30;

impl Default for NoisePlan {
    fn default() -> Self {
        NoisePlan {
            levels: vec![0, 5, 10, 15, 20, 25, 30],
            seed: 42,
        }
    }
}

/// Columns noise clauses may be drawn from: name, source dataset and up to
/// 64 rendered values. The first dataset to contribute a name owns it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NoisePool {
    columns: BTreeMap<String, (String, Vec<String>)>,
}

const POOL_VALUES: usize = 64;

impl NoisePool {
    pub fn from_documents<'a>(docs: impl IntoIterator<Item = &'a Document>) -> NoisePool {
        let mut pool = NoisePool::default();
        for d in docs {
            for c in &d.cells {
                pool.add(&c.name, &d.dataset_id, &c.value);
            }
        }
        pool
    }

    /// Every row of every table, rendered at `precision`.
    pub fn from_tables(tables: &[Table], precision: u32) -> NoisePool {
        let mut pool = NoisePool::default();
        for t in tables {
            for row in &t.rows {
                for (c, v) in t.columns.iter().zip(row) {
                    pool.add(&c.name, &t.dataset_id, &v.canonical(precision));
                }
            }
        }
        pool
    }

    fn add(&mut self, name: &str, dataset: &str, value: &CellValue) {
        if value.is_missing() {
            return;
        }
        let e = self
            .columns
            .entry(name.to_string())
            .or_insert_with(|| (dataset.to_string(), Vec::new()));
        if e.0 == dataset && e.1.len() < POOL_VALUES {
            e.1.push(normalize_value(value, 2));
        }
    }

    /// Adds the columns of `other` whose names are not taken yet.
    pub fn extend(&mut self, other: NoisePool) {
        for (name, v) in other.columns {
            self.columns.entry(name).or_insert(v);
        }
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }
}

/// Per-document noise clauses drawn from pool columns of other datasets,
/// with every constrained column and the document's own columns excluded.
/// The sequence is fixed per document, so level `n` uses its first `n`
/// clauses.
pub fn noise_clauses(
    corpus: &Corpus,
    pool: &NoisePool,
    constrained: &BTreeSet<String>,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<String>>> {
    corpus
        .documents
        .iter()
        .map(|d| {
            let own: BTreeSet<&str> = d.column_names().collect();
            let cols: Vec<(&str, &Vec<String>)> = pool
                .columns
                .iter()
                .filter(|(name, (ds, _))| {
                    *ds != d.dataset_id && !own.contains(name.as_str()) && !constrained.contains(*name)
                })
                .map(|(name, (_, vals))| (name.as_str(), vals))
                .collect();
            if cols.len() < count {
                return Err(Error::Argument(format!(
                    "noise pool has {} usable columns for `{}`, need {count}",
                    cols.len(),
                    d.doc_id
                )));
            }
            let mut rng = rng_for(seed, &format!("noise/{}", d.doc_id));
            let picked: Vec<&(&str, &Vec<String>)> = cols.choose_multiple(&mut rng, count).collect();
            Ok(picked
                .into_iter()
                .map(|(name, vals)| clause(name, vals.choose(&mut rng).expect("non-empty")))
                .collect())
        })
        .collect()
}

pub fn with_noise(doc: &Document, clauses: &[String]) -> Document {
    let mut d = doc.clone();
    for c in clauses {
        d.text.push(' ');
        d.text.push_str(c);
    }
    d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisePoint {
    pub level: usize,
    pub mrr_at_10: f64,
    pub delta: f64,
}

/// MRR@10 per injection level. Level 0 reuses `baseline` unchanged.
pub fn noise_robustness(
    embedder: &dyn Embedder,
    corpus: &Corpus,
    baseline: &EmbeddingMatrix,
    queries: &[Query],
    qrels: &QrelSet,
    pool: &NoisePool,
    plan: &NoisePlan,
) -> Result<Vec<NoisePoint>> {
    if plan.levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Argument("noise levels must be ascending".into()));
    }
    let max = plan.levels.last().copied().unwrap_or(0);
    if max > MAX_NOISE {
        return Err(Error::Argument(format!("noise level {max} above {MAX_NOISE}")));
    }
    let constrained: BTreeSet<String> = queries
        .iter()
        .flat_map(|q| q.constraints.iter().map(|c| c.column.clone()))
        .collect();
    let noise = noise_clauses(corpus, pool, &constrained, max, plan.seed)?;
    let mut out = Vec::new();
    let mut base = None;
    for &level in &plan.levels {
        let report = if level == 0 {
            eval_retrieval(embedder, baseline, queries, qrels)?
        } else {
            let docs: Vec<Document> = corpus
                .documents
                .iter()
                .zip(&noise)
                .map(|(d, n)| with_noise(d, &n[..level]))
                .collect();
            let m = embed_documents(embedder, &docs, 256)?;
            eval_retrieval(embedder, &m, queries, qrels)?
        };
        let b = *base.get_or_insert(report.mrr_at_10);
        out.push(NoisePoint {
            level,
            mrr_at_10: report.mrr_at_10,
            delta: report.mrr_at_10 - b,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateReport {
    pub template: Template,
    pub name: String,
    pub retrieval: RetrievalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateRobustness {
    pub reports: Vec<TemplateReport>,
    /// Standard deviation of nDCG@10 across templates, per query id.
    pub dispersion: BTreeMap<String, f64>,
    pub mean_dispersion: f64,
}

pub fn template_robustness(
    embedder: &dyn Embedder,
    corpus: &EmbeddingMatrix,
    queries: &[Query],
    qrels: &QrelSet,
) -> Result<TemplateRobustness> {
    let depth = *CUTOFFS.last().expect("non-empty");
    let mut reports = Vec::new();
    let mut per_query: Vec<Vec<f64>> = vec![Vec::new(); queries.len()];
    for t in Template::ALL {
        let variants: Vec<Query> = queries.iter().map(|q| q.rephrased(t)).collect();
        let texts: Vec<&str> = variants.iter().map(|q| q.text.as_str()).collect();
        let embs: Vec<Embedding> = embed_all(embedder, &texts, 256)?;
        let scores: Vec<QueryScores> = variants
            .iter()
            .zip(&embs)
            .map(|(q, e)| {
                let hits = exact_search(e, corpus, depth)?;
                let ranked: Vec<&str> = hits.iter().map(|(i, _)| corpus.doc_ids[*i].as_str()).collect();
                let rel = qrels
                    .get(&q.qid)
                    .ok_or_else(|| Error::DataConsistency(format!("no qrels for {}", q.qid)))?;
                Ok(score_ranking(&ranked, rel))
            })
            .collect::<Result<_>>()?;
        for (i, s) in scores.iter().enumerate() {
            per_query[i].push(s.ndcg_at_10);
        }
        let refs: Vec<&Query> = variants.iter().collect();
        reports.push(TemplateReport {
            template: t,
            name: t.name().to_string(),
            retrieval: aggregate(&refs, &scores, 0),
        });
    }
    let dispersion: BTreeMap<String, f64> = queries
        .iter()
        .zip(&per_query)
        .map(|(q, v)| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
            (q.qid.clone(), var.sqrt())
        })
        .collect();
    let mean_dispersion = if dispersion.is_empty() {
        0.0
    } else {
        dispersion.values().sum::<f64>() / dispersion.len() as f64
    };
    Ok(TemplateRobustness {
        reports,
        dispersion,
        mean_dispersion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub intra: f64,
    pub inter: f64,
    pub ratio: f64,
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Centroid-based separation: mean distance between class centroids over
/// mean distance from points to their own centroid.
pub fn cluster_ratio(points: &[Vec<f64>], labels: &[String]) -> Result<ClusterStats> {
    if points.len() != labels.len() {
        return Err(Error::LengthMismatch(points.len(), labels.len()));
    }
    let mut groups: BTreeMap<&str, Vec<&Vec<f64>>> = BTreeMap::new();
    for (p, l) in points.iter().zip(labels) {
        groups.entry(l).or_default().push(p);
    }
    if groups.len() < 2 {
        return Err(Error::Cluster("need at least two labels".into()));
    }
    let dim = points[0].len();
    let centroids: BTreeMap<&str, Vec<f64>> = groups
        .iter()
        .map(|(l, ps)| {
            let mut c = vec![0.0; dim];
            for p in ps {
                for (ci, x) in c.iter_mut().zip(p.iter()) {
                    *ci += x;
                }
            }
            c.iter_mut().for_each(|x| *x /= ps.len() as f64);
            (*l, c)
        })
        .collect();
    let intra = points
        .iter()
        .zip(labels)
        .map(|(p, l)| euclid(p, &centroids[l.as_str()]))
        .sum::<f64>()
        / points.len() as f64;
    let cs: Vec<&Vec<f64>> = centroids.values().collect();
    let mut inter = 0.0;
    let mut pairs = 0;
    for i in 0..cs.len() {
        for j in i + 1..cs.len() {
            inter += euclid(cs[i], cs[j]);
            pairs += 1;
        }
    }
    inter /= pairs as f64;
    if intra == 0.0 {
        return Err(Error::Cluster("every point sits on its centroid".into()));
    }
    Ok(ClusterStats {
        intra,
        inter,
        ratio: inter / intra,
    })
}

/// Tab-separated `(case, baseline rho, model rho)` rows.
pub fn rho_comparison_tsv(baseline: &[SensitivityResult], model: &[SensitivityResult]) -> String {
    let mut out = String::from("case\tbaseline_rho\tmodel_rho\n");
    for (b, m) in baseline.iter().zip(model) {
        out.push_str(&format!(
            "{}\t{}\t{}\n",
            b.case_id,
            format_number(b.rho, 6),
            format_number(m.rho, 6)
        ));
    }
    out
}

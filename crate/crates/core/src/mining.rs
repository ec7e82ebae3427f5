//! Contrastive triplet construction with positive-aware hard negatives.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::{embed_all, embed_documents, exact_search, Embedder, Embedding, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::query::{make_class_query, satisfies, QrelSet, Query};
use crate::table::{Corpus, Document};
use crate::util::rng_for;

pub const DEFAULT_TOP_K: usize = 50;
pub const DEFAULT_NEGATIVES: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Retrieval,
    Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub task: Task,
    pub query: String,
    pub positive_doc_id: String,
    pub negative_doc_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qid: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// A triplet with its document texts attached, as consumed by the trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedTriplet {
    #[serde(flatten)]
    pub triplet: Triplet,
    pub positive: String,
    pub negatives: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiningConfig {
    pub top_k: usize,
    pub h: usize,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            top_k: DEFAULT_TOP_K,
            h: DEFAULT_NEGATIVES,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.h == 0 || self.top_k == 0 {
            return Err(Error::Config("mining top_k and h must be positive".into()));
        }
        if self.h > self.top_k {
            return Err(Error::Config(format!("h = {} exceeds top_k = {}", self.h, self.top_k)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MiningOutput {
    pub triplets: Vec<Triplet>,
    /// Queries whose whole candidate pool was filtered away.
    pub zero_negative: usize,
    /// Triplets that received fewer than `h` negatives.
    pub short: usize,
}

/// Top-`top_k` candidates by cosine minus the positive and every row for
/// which `is_valid` holds, truncated to `h`, in similarity order.
pub fn mine_hard_negatives(
    query: &Embedding,
    positive: usize,
    candidates: &EmbeddingMatrix,
    is_valid: impl Fn(usize) -> bool,
    cfg: &MiningConfig,
) -> Result<Vec<usize>> {
    let hits = exact_search(query, candidates, cfg.top_k)?;
    Ok(hits
        .into_iter()
        .map(|(i, _)| i)
        .filter(|&i| i != positive && !is_valid(i))
        .take(cfg.h)
        .collect())
}

fn finish(mut out: MiningOutput, h: usize) -> MiningOutput {
    out.triplets.retain(|t| !t.negative_doc_ids.is_empty());
    out.short = out.triplets.iter().filter(|t| t.negative_doc_ids.len() < h).count();
    if out.zero_negative > 0 {
        log::warn!("{} queries produced no hard negatives and were dropped", out.zero_negative);
    }
    out
}

/// One triplet per query with its seed document as the positive. The
/// corpus matrix must hold the corpus documents in corpus order.
pub fn build_retrieval_triplets(
    queries: &[Query],
    qrels: &QrelSet,
    corpus: &Corpus,
    matrix: &EmbeddingMatrix,
    embedder: &dyn Embedder,
    cfg: &MiningConfig,
) -> Result<MiningOutput> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if matrix.len() != corpus.len() {
        return Err(Error::LengthMismatch(corpus.len(), matrix.len()));
    }
    let index = corpus.doc_index();
    let texts: Vec<&str> = queries.iter().map(|q| q.text.as_str()).collect();
    let q_emb = embed_all(embedder, &texts, 256)?;
    let mined: Vec<Result<Option<Triplet>>> = queries
        .par_iter()
        .zip(q_emb.par_iter())
        .map(|(q, e)| {
            let &pos = index.get(q.seed_doc_id.as_str()).ok_or_else(|| {
                Error::DataConsistency(format!("seed `{}` of {} not in corpus", q.seed_doc_id, q.qid))
            })?;
            let relevant = qrels.get(&q.qid);
            let negs = mine_hard_negatives(
                e,
                pos,
                matrix,
                |i| {
                    let d = &corpus.documents[i];
                    satisfies(d, &q.constraints) || relevant.is_some_and(|r| r.contains(&d.doc_id))
                },
                cfg,
            )?;
            if negs.is_empty() {
                return Ok(None);
            }
            Ok(Some(Triplet {
                task: Task::Retrieval,
                query: q.text.clone(),
                positive_doc_id: q.seed_doc_id.clone(),
                negative_doc_ids: negs.iter().map(|&i| corpus.documents[i].doc_id.clone()).collect(),
                qid: Some(q.qid.clone()),
                label: None,
            }))
        })
        .collect();
    let mut out = MiningOutput::default();
    for r in mined {
        match r? {
            Some(t) => out.triplets.push(t),
            None => out.zero_negative += 1,
        }
    }
    out.triplets.sort_by(|a, b| a.qid.cmp(&b.qid));
    Ok(finish(out, cfg.h))
}

/// A target-masked document with its class label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDoc {
    pub doc: Document,
    pub label: String,
}

/// Triplets for one dataset: `examples` are the anchors and `pool` the
/// same-dataset documents negatives are mined from (anchors included).
pub fn build_classification_triplets(
    target_column: &str,
    examples: &[LabeledDoc],
    pool: &[LabeledDoc],
    embedder: &dyn Embedder,
    cfg: &MiningConfig,
) -> Result<MiningOutput> {
    cfg.validate()?;
    let labels: BTreeSet<&str> = pool.iter().map(|e| e.label.as_str()).collect();
    if labels.len() < 2 {
        log::warn!("target `{target_column}` has a single class; no classification triplets");
        return Ok(MiningOutput::default());
    }
    let docs: Vec<Document> = pool.iter().map(|e| e.doc.clone()).collect();
    let matrix = embed_documents(embedder, &docs, 256)?;
    let index: BTreeMap<&str, usize> = docs.iter().enumerate().map(|(i, d)| (d.doc_id.as_str(), i)).collect();
    let mut class_queries: BTreeMap<&str, String> = BTreeMap::new();
    for l in &labels {
        class_queries.insert(l, make_class_query(target_column, l)?);
    }
    let qtexts: Vec<&str> = class_queries.values().map(String::as_str).collect();
    let q_emb: BTreeMap<&str, Embedding> = class_queries
        .keys()
        .copied()
        .zip(embed_all(embedder, &qtexts, 256)?)
        .collect();
    let mined: Vec<Result<Option<Triplet>>> = examples
        .par_iter()
        .map(|ex| {
            let &pos = index.get(ex.doc.doc_id.as_str()).ok_or_else(|| {
                Error::DataConsistency(format!("example `{}` not in negative pool", ex.doc.doc_id))
            })?;
            let e = &q_emb[ex.label.as_str()];
            let negs = mine_hard_negatives(e, pos, &matrix, |i| pool[i].label == ex.label, cfg)?;
            if negs.is_empty() {
                return Ok(None);
            }
            Ok(Some(Triplet {
                task: Task::Classification,
                query: class_queries[ex.label.as_str()].clone(),
                positive_doc_id: ex.doc.doc_id.clone(),
                negative_doc_ids: negs.iter().map(|&i| docs[i].doc_id.clone()).collect(),
                qid: None,
                label: Some(ex.label.clone()),
            }))
        })
        .collect();
    let mut out = MiningOutput::default();
    for r in mined {
        match r? {
            Some(t) => out.triplets.push(t),
            None => out.zero_negative += 1,
        }
    }
    Ok(finish(out, cfg.h))
}

/// Seeded shuffle of both pools, then blocks of `ratio.0` retrieval and
/// `ratio.1` classification triplets until either pool runs out; the rest
/// of the other pool follows in shuffled order.
pub fn mix_dataset(
    retrieval: Vec<Triplet>,
    classification: Vec<Triplet>,
    ratio: (usize, usize),
    seed: u64,
) -> Result<Vec<Triplet>> {
    if ratio.0 == 0 || ratio.1 == 0 {
        return Err(Error::Argument("mixing ratio terms must be positive".into()));
    }
    let mut ret = retrieval;
    let mut cls = classification;
    ret.shuffle(&mut rng_for(seed, "mix/retrieval"));
    cls.shuffle(&mut rng_for(seed, "mix/classification"));
    let mut out = Vec::with_capacity(ret.len() + cls.len());
    let mut r = ret.into_iter().peekable();
    let mut c = cls.into_iter().peekable();
    while r.peek().is_some() && c.peek().is_some() {
        out.extend(r.by_ref().take(ratio.0));
        out.extend(c.by_ref().take(ratio.1));
    }
    out.extend(r);
    out.extend(c);
    Ok(out)
}

/// Attaches texts from `docs`; every referenced id must be present.
pub fn resolve_triplets<'a>(
    triplets: &[Triplet],
    docs: impl IntoIterator<Item = &'a Document>,
) -> Result<Vec<ResolvedTriplet>> {
    let texts: BTreeMap<&str, &str> = docs.into_iter().map(|d| (d.doc_id.as_str(), d.text.as_str())).collect();
    let lookup = |id: &str| {
        texts
            .get(id)
            .map(|t| t.to_string())
            .ok_or_else(|| Error::DataConsistency(format!("triplet references unknown doc `{id}`")))
    };
    triplets
        .iter()
        .map(|t| {
            Ok(ResolvedTriplet {
                triplet: t.clone(),
                positive: lookup(&t.positive_doc_id)?,
                negatives: t.negative_doc_ids.iter().map(|id| lookup(id)).collect::<Result<_>>()?,
            })
        })
        .collect()
}

/// Symbolic re-check of every negative. Returns the number of negatives
/// that satisfy their query (retrieval) or carry the positive's label
/// (classification), plus any positive listed among its own negatives.
pub fn count_invalid_negatives(
    triplets: &[Triplet],
    queries: &BTreeMap<String, Query>,
    corpus: &Corpus,
    labels: &BTreeMap<String, String>,
) -> Result<usize> {
    let index = corpus.doc_index();
    let mut bad = 0;
    for t in triplets {
        for n in &t.negative_doc_ids {
            if *n == t.positive_doc_id {
                bad += 1;
                continue;
            }
            match t.task {
                Task::Retrieval => {
                    let qid = t.qid.as_deref().ok_or_else(|| Error::DataConsistency("retrieval triplet without qid".into()))?;
                    let q = queries
                        .get(qid)
                        .ok_or_else(|| Error::DataConsistency(format!("unknown qid `{qid}`")))?;
                    let &i = index
                        .get(n.as_str())
                        .ok_or_else(|| Error::DataConsistency(format!("unknown negative `{n}`")))?;
                    if satisfies(&corpus.documents[i], &q.constraints) {
                        bad += 1;
                    }
                }
                Task::Classification => {
                    let l = labels
                        .get(n)
                        .ok_or_else(|| Error::DataConsistency(format!("negative `{n}` has no label")))?;
                    if Some(l) == t.label.as_ref() {
                        bad += 1;
                    }
                }
            }
        }
    }
    Ok(bad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trip(task: Task, i: usize) -> Triplet {
        Triplet {
            task,
            query: format!("q{i}"),
            positive_doc_id: format!("p{i}"),
            negative_doc_ids: vec![format!("n{i}")],
            qid: None,
            label: None,
        }
    }

    #[test]
    fn mixing_ratio_windows() {
        let ret: Vec<Triplet> = (0..500).map(|i| trip(Task::Retrieval, i)).collect();
        let cls: Vec<Triplet> = (0..100).map(|i| trip(Task::Classification, i)).collect();
        let out = mix_dataset(ret.clone(), cls.clone(), (5, 1), 42).unwrap();
        assert_eq!(out.len(), 600);
        for w in out.chunks(6) {
            assert_eq!(w.iter().filter(|t| t.task == Task::Retrieval).count(), 5);
        }
        assert_eq!(out, mix_dataset(ret.clone(), cls, (5, 1), 42).unwrap());
        let only = mix_dataset(ret.clone(), vec![], (5, 1), 42).unwrap();
        assert_eq!(only.len(), 500);
        let mut sorted = only.clone();
        sorted.sort_by(|a, b| a.query.cmp(&b.query));
        let mut orig = ret;
        orig.sort_by(|a, b| a.query.cmp(&b.query));
        assert_eq!(sorted, orig);
        assert!(mix_dataset(vec![], vec![], (0, 1), 1).is_err());
    }

    #[test]
    fn config_rules() {
        assert!(MiningConfig { top_k: 5, h: 7 }.validate().is_err());
        assert!(MiningConfig::default().validate().is_ok());
    }

    #[test]
    fn triplet_json_shape() {
        let t = Triplet {
            task: Task::Retrieval,
            query: "Find records where a is 1".into(),
            positive_doc_id: "x:0".into(),
            negative_doc_ids: vec!["x:1".into()],
            qid: Some("q00000".into()),
            label: None,
        };
        assert_eq!(
            serde_json::to_string(&t).unwrap(),
            r#"{"task":"retrieval","query":"Find records where a is 1","positive_doc_id":"x:0","negative_doc_ids":["x:1"],"qid":"q00000"}"#
        );
    }
}

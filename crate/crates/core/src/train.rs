//! InfoNCE training of the desk embedder's projection.

use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::embed::{DeskEmbedder, SparseVec};
use crate::error::{Error, Result};
use crate::mining::ResolvedTriplet;
use crate::util::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    /// Per-weight AdaGrad; only touched columns are updated.
    Adagrad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub temperature: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: Optimizer::Sgd,
            temperature: 0.05,
            batch_size: 64,
            epochs: 6,
            learning_rate: 3e-3,
            momentum: 0.0,
            grad_clip: None,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be finite and non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must be in [0, 1)".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config("grad_clip must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    pub final_mean_loss: f64,
    pub steps: usize,
    pub param_checksum: String,
    /// In-batch negatives that were actually valid for the query.
    pub collisions: usize,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

/// Mean InfoNCE over rows of `[s⁺, s⁻…]` and its gradient per similarity.
pub fn info_nce_loss(sims: &[Vec<f64>], temperature: f64) -> Result<(f64, Vec<Vec<f64>>)> {
    if !(temperature > 0.0) {
        return Err(Error::Config("temperature must be positive".into()));
    }
    if sims.is_empty() {
        return Err(Error::Argument("no queries in batch".into()));
    }
    let n = sims.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(sims.len());
    for row in sims {
        if row.is_empty() {
            return Err(Error::Argument("similarity row without a positive".into()));
        }
        if row.iter().any(|s| s.is_nan()) {
            return Err(Error::Numeric("NaN similarity".into()));
        }
        let logits: Vec<f64> = row.iter().map(|s| s / temperature).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        total += (max - logits[0]) + z.ln();
        let g: Vec<f64> = exps
            .iter()
            .enumerate()
            .map(|(k, e)| (e / z - if k == 0 { 1.0 } else { 0.0 }) / (temperature * n))
            .collect();
        grads.push(g);
    }
    Ok((total / n, grads))
}

/// Featurized triplet: query, positive, hard negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatTriplet {
    pub query: SparseVec,
    pub positive: SparseVec,
    pub negatives: Vec<SparseVec>,
}

/// Sparse gradient of the loss with respect to the columns of `W`:
/// `data[k*d .. (k+1)*d]` belongs to column `index[k]`, with `index` sorted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ColumnGrad {
    pub dim: usize,
    pub index: Vec<u32>,
    pub data: Vec<f64>,
}

impl ColumnGrad {
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn column(&self, col: u32) -> Option<&[f64]> {
        let k = self.index.binary_search(&col).ok()?;
        Some(&self.data[k * self.dim..(k + 1) * self.dim])
    }

    pub fn get(&self, col: u32, row: usize) -> f64 {
        self.column(col).map_or(0.0, |c| c[row])
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &[f64])> {
        self.index.iter().copied().zip(self.data.chunks_exact(self.dim.max(1)))
    }
}

struct Forward {
    z: Vec<f64>,
    norm: f64,
}

fn forward(emb: &DeskEmbedder, f: &SparseVec) -> Forward {
    let u = emb.project(f);
    let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let z = if norm > 0.0 { u.iter().map(|x| x / norm).collect() } else { u };
    Forward { z, norm }
}

fn dotv(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Similarity rows for the batch: positive, the hard negatives, then every
/// other query's positive. Texts are addressed by index into `texts`.
struct BatchLayout {
    texts: Vec<SparseVec>,
    /// Per query: (query text, positive text, negative texts).
    rows: Vec<(usize, usize, Vec<usize>)>,
}

fn layout(batch: &[&FeatTriplet]) -> BatchLayout {
    let mut texts = Vec::new();
    let mut push = |f: &SparseVec| {
        texts.push(f.clone());
        texts.len() - 1
    };
    let mut rows: Vec<(usize, usize, Vec<usize>)> = batch
        .iter()
        .map(|t| {
            let q = push(&t.query);
            let p = push(&t.positive);
            let n = t.negatives.iter().map(&mut push).collect();
            (q, p, n)
        })
        .collect();
    let positives: Vec<usize> = rows.iter().map(|r| r.1).collect();
    for (i, r) in rows.iter_mut().enumerate() {
        r.2.extend(positives.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, &p)| p));
    }
    BatchLayout { texts, rows }
}

fn similarities(l: &BatchLayout, fw: &[Forward]) -> Vec<Vec<f64>> {
    l.rows
        .iter()
        .map(|(q, p, negs)| {
            let zq = &fw[*q].z;
            std::iter::once(dotv(zq, &fw[*p].z))
                .chain(negs.iter().map(|n| dotv(zq, &fw[*n].z)))
                .collect()
        })
        .collect()
}

/// Batch loss only; used for finite-difference checks.
pub fn batch_loss(emb: &DeskEmbedder, batch: &[&FeatTriplet], temperature: f64) -> Result<f64> {
    let l = layout(batch);
    let fw: Vec<Forward> = l.texts.iter().map(|f| forward(emb, f)).collect();
    Ok(info_nce_loss(&similarities(&l, &fw), temperature)?.0)
}

/// Batch loss and its exact gradient through `normalize(W f)`.
pub fn batch_loss_and_grad(
    emb: &DeskEmbedder,
    batch: &[&FeatTriplet],
    temperature: f64,
) -> Result<(f64, ColumnGrad)> {
    let d = emb.output_dim();
    let l = layout(batch);
    let fw: Vec<Forward> = l.texts.iter().map(|f| forward(emb, f)).collect();
    let (loss, g) = info_nce_loss(&similarities(&l, &fw), temperature)?;
    let mut dz = vec![vec![0.0; d]; l.texts.len()];
    for ((q, p, negs), gi) in l.rows.iter().zip(&g) {
        for (k, &t) in std::iter::once(p).chain(negs.iter()).enumerate() {
            let w = gi[k];
            if w == 0.0 {
                continue;
            }
            for r in 0..d {
                dz[*q][r] += w * fw[t].z[r];
                dz[t][r] += w * fw[*q].z[r];
            }
        }
    }
    let mut index: Vec<u32> = l.texts.iter().flat_map(|f| f.idx.iter().copied()).collect();
    index.sort_unstable();
    index.dedup();
    let mut grad = ColumnGrad {
        dim: d,
        data: vec![0.0; index.len() * d],
        index,
    };
    for (t, f) in l.texts.iter().enumerate() {
        let Forward { z, norm } = &fw[t];
        if *norm == 0.0 {
            continue;
        }
        let proj = dotv(z, &dz[t]);
        let du: Vec<f64> = (0..d).map(|r| (dz[t][r] - z[r] * proj) / norm).collect();
        for (&i, &v) in f.idx.iter().zip(&f.val) {
            let k = grad.index.binary_search(&i).expect("collected above");
            let col = &mut grad.data[k * d..(k + 1) * d];
            for (c, x) in col.iter_mut().zip(&du) {
                *c += v * x;
            }
        }
    }
    Ok((loss, grad))
}

/// Featurizes every distinct text once.
pub fn featurize_triplets(emb: &DeskEmbedder, triplets: &[ResolvedTriplet]) -> Vec<FeatTriplet> {
    fn get<'a>(cache: &mut HashMap<&'a str, SparseVec>, emb: &DeskEmbedder, t: &'a str) -> SparseVec {
        cache.entry(t).or_insert_with(|| emb.featurize(t)).clone()
    }
    let mut cache: HashMap<&str, SparseVec> = HashMap::new();
    triplets
        .iter()
        .map(|t| FeatTriplet {
            query: get(&mut cache, emb, &t.triplet.query),
            positive: get(&mut cache, emb, &t.positive),
            negatives: t.negatives.iter().map(|n| get(&mut cache, emb, n)).collect(),
        })
        .collect()
}

/// Default collision rule: a peer's positive is the same document.
pub fn same_positive(a: &ResolvedTriplet, b: &ResolvedTriplet) -> bool {
    a.triplet.positive_doc_id == b.triplet.positive_doc_id
}

const ADAGRAD_EPS: f64 = 1e-10;

/// Mini-batch gradient descent on `W` with an epoch-seeded shuffle.
/// `collides(a, b)` tells whether `b`'s positive is actually valid for `a`'s
/// query; such in-batch negatives are kept and counted.
pub fn train(
    emb: &mut DeskEmbedder,
    triplets: &[ResolvedTriplet],
    cfg: &TrainConfig,
    collides: &dyn Fn(&ResolvedTriplet, &ResolvedTriplet) -> bool,
) -> Result<TrainReport> {
    cfg.validate()?;
    if triplets.is_empty() {
        return Err(Error::Argument("no triplets to train on".into()));
    }
    let start = Instant::now();
    let feats = featurize_triplets(emb, triplets);
    let d = emb.output_dim();
    let mut accum = (cfg.optimizer == Optimizer::Adagrad).then(|| vec![0.0; emb.weights().len()]);
    let mut velocity = (cfg.momentum > 0.0).then(|| vec![0.0; emb.weights().len()]);
    let mut losses = Vec::new();
    let mut collisions = 0;
    let mut last_epoch = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.shuffle(&mut rng_for(cfg.seed, &format!("train/epoch/{epoch}")));
        last_epoch.clear();
        for chunk in order.chunks(cfg.batch_size) {
            for &a in chunk {
                for &b in chunk {
                    if a != b && collides(&triplets[a], &triplets[b]) {
                        collisions += 1;
                    }
                }
            }
            let batch: Vec<&FeatTriplet> = chunk.iter().map(|&i| &feats[i]).collect();
            let (loss, mut grad) = batch_loss_and_grad(emb, &batch, cfg.temperature)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at step {}", losses.len())));
            }
            if let Some(clip) = cfg.grad_clip {
                let n = grad.norm();
                if n > clip {
                    let s = clip / n;
                    grad.data.iter_mut().for_each(|g| *g *= s);
                }
            }
            if let Some(acc) = accum.as_mut() {
                for (i, g) in grad.iter() {
                    let base = i as usize * d;
                    let col = emb.column_mut(i as usize);
                    for r in 0..d {
                        let a = &mut acc[base + r];
                        *a += g[r] * g[r];
                        col[r] -= cfg.learning_rate * g[r] / (a.sqrt() + ADAGRAD_EPS);
                    }
                }
            } else {
            match velocity.as_mut() {
                None => {
                    for (i, g) in grad.iter() {
                        let col = emb.column_mut(i as usize);
                        for r in 0..d {
                            col[r] -= cfg.learning_rate * g[r];
                        }
                    }
                }
                Some(v) => {
                    for x in v.iter_mut() {
                        *x *= cfg.momentum;
                    }
                    for (i, g) in grad.iter() {
                        let base = i as usize * d;
                        for r in 0..d {
                            v[base + r] += g[r];
                        }
                    }
                    for (w, vi) in emb.weights_mut().iter_mut().zip(v.iter()) {
                        *w -= cfg.learning_rate * vi;
                    }
                }
            }
            }
            losses.push(loss);
            last_epoch.push(loss);
        }
        log::info!(
            "epoch {}: mean loss {:.4}",
            epoch + 1,
            last_epoch.iter().sum::<f64>() / last_epoch.len() as f64
        );
    }
    emb.quantize();
    Ok(TrainReport {
        final_mean_loss: last_epoch.iter().sum::<f64>() / last_epoch.len() as f64,
        steps: losses.len(),
        losses,
        param_checksum: emb.checksum(),
        collisions,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

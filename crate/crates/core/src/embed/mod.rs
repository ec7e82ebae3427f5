//! Embedder contract, cosine similarity, exact search and the binary
//! embedding-matrix format.

use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};

pub mod desk;
pub mod remote;

pub use desk::{DeskConfig, DeskEmbedder, SparseVec};
pub use remote::{RemoteConfig, RemoteEmbedder};

/// A unit-norm dense vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub Vec<f32>);

impl Embedding {
    /// L2-normalizes `v` in double precision. A zero vector maps to the
    /// first basis vector so the unit-norm invariant always holds.
    pub fn from_unnormalized(v: &[f64]) -> Embedding {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            let mut e = vec![0.0f32; v.len()];
            if let Some(first) = e.first_mut() {
                *first = 1.0;
            }
            return Embedding(e);
        }
        Embedding(v.iter().map(|x| (x / norm) as f32).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension(a.dim(), b.dim()));
    }
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot(&a.0, &b.0) / (na * nb)).clamp(-1.0, 1.0))
}

/// Maps texts to unit vectors of a fixed dimension.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    /// Short identifier recorded in reports.
    fn id(&self) -> String;

    /// Output order matches input order.
    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<Embedding>>;
}

/// Row-major matrix of corpus embeddings with their document ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub dim: usize,
    pub doc_ids: Vec<String>,
    pub data: Vec<f32>,
}

const MATRIX_MAGIC: &[u8; 8] = b"TKEMBMAT";
const MATRIX_VERSION: u32 = 1;

impl EmbeddingMatrix {
    pub fn new(dim: usize, doc_ids: Vec<String>, rows: Vec<Embedding>) -> Result<EmbeddingMatrix> {
        if doc_ids.len() != rows.len() {
            return Err(Error::LengthMismatch(doc_ids.len(), rows.len()));
        }
        let mut data = Vec::with_capacity(dim * rows.len());
        for r in rows {
            if r.dim() != dim {
                return Err(Error::Contract {
                    expected: dim,
                    got: r.dim(),
                });
            }
            data.extend(r.0);
        }
        Ok(EmbeddingMatrix { dim, doc_ids, data })
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn ids_path(path: &Path) -> PathBuf {
        let mut p = path.as_os_str().to_owned();
        p.push(".ids");
        PathBuf::from(p)
    }

    /// Writes the binary matrix to `path` and the doc ids, one per line, to
    /// `path` + ".ids".
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MATRIX_MAGIC)?;
        w.write_all(&MATRIX_VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for x in &self.data {
            w.write_all(&x.to_le_bytes())?;
        }
        w.flush()?;
        let mut ids = BufWriter::new(File::create(Self::ids_path(path))?);
        for id in &self.doc_ids {
            writeln!(ids, "{id}")?;
        }
        ids.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<EmbeddingMatrix> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MATRIX_MAGIC {
            return Err(Error::Format(format!("{} is not an embedding matrix", path.display())));
        }
        let version = read_u32(&mut r)?;
        if version != MATRIX_VERSION {
            return Err(Error::Format(format!("unsupported matrix version {version}")));
        }
        let dim = read_u32(&mut r)? as usize;
        let count = read_u64(&mut r)? as usize;
        let mut data = vec![0f32; dim * count];
        let mut buf = [0u8; 4];
        for x in data.iter_mut() {
            r.read_exact(&mut buf)?;
            *x = f32::from_le_bytes(buf);
        }
        let ids = BufReader::new(File::open(Self::ids_path(path))?);
        let doc_ids: Vec<String> = ids.lines().collect::<std::io::Result<_>>()?;
        if doc_ids.len() != count {
            return Err(Error::LengthMismatch(count, doc_ids.len()));
        }
        Ok(EmbeddingMatrix { dim, doc_ids, data })
    }
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Embeds `texts` in fixed-size batches, preserving order.
pub fn embed_all(embedder: &dyn Embedder, texts: &[&str], batch_size: usize) -> Result<Vec<Embedding>> {
    let mut out = Vec::with_capacity(texts.len());
    for chunk in texts.chunks(batch_size.max(1)) {
        let got = embedder.embed_texts(chunk)?;
        if got.len() != chunk.len() {
            return Err(Error::LengthMismatch(chunk.len(), got.len()));
        }
        for e in &got {
            if e.dim() != embedder.dim() {
                return Err(Error::Contract {
                    expected: embedder.dim(),
                    got: e.dim(),
                });
            }
        }
        out.extend(got);
    }
    Ok(out)
}

pub fn embed_documents(
    embedder: &dyn Embedder,
    docs: &[crate::table::Document],
    batch_size: usize,
) -> Result<EmbeddingMatrix> {
    let texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
    let rows = embed_all(embedder, &texts, batch_size)?;
    EmbeddingMatrix::new(embedder.dim(), docs.iter().map(|d| d.doc_id.clone()).collect(), rows)
}

/// Descending score, then ascending doc id.
fn rank_order(a: &(usize, f64), b: &(usize, f64), ids: &[String]) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| ids[a.0].cmp(&ids[b.0]))
}

/// Full scan over every corpus row. Returns `(row index, score)` pairs.
pub fn exact_search(query: &Embedding, corpus: &EmbeddingMatrix, top_k: usize) -> Result<Vec<(usize, f64)>> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if query.dim() != corpus.dim {
        return Err(Error::Dimension(query.dim(), corpus.dim));
    }
    let mut scored: Vec<(usize, f64)> = corpus
        .data
        .par_chunks(corpus.dim)
        .map(|row| dot(&query.0, row))
        .enumerate()
        .collect();
    let k = top_k.min(scored.len());
    if k == 0 {
        return Ok(Vec::new());
    }
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, |a, b| rank_order(a, b, &corpus.doc_ids));
        scored.truncate(k);
    }
    scored.sort_by(|a, b| rank_order(a, b, &corpus.doc_ids));
    Ok(scored)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rand_emb(rng: &mut impl Rng, d: usize) -> Embedding {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        Embedding::from_unnormalized(&v)
    }

    #[test]
    fn cosine_basics() {
        let a = Embedding(vec![1.0, 0.0]);
        let b = Embedding(vec![0.0, 1.0]);
        assert_eq!(cosine(&a, &a).unwrap(), 1.0);
        assert_eq!(cosine(&a, &b).unwrap(), 0.0);
        assert!(cosine(&a, &Embedding(vec![1.0])).is_err());
        let mut rng = crate::util::rng_for(1, "cos");
        for _ in 0..100 {
            let x = rand_emb(&mut rng, 16);
            let y = rand_emb(&mut rng, 16);
            assert_eq!(cosine(&x, &y).unwrap(), cosine(&y, &x).unwrap());
            assert!((x.norm() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_vector_still_unit() {
        let e = Embedding::from_unnormalized(&[0.0; 4]);
        assert_eq!(e.0, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn search_matches_sorted_scan_and_breaks_ties_by_id() {
        let mut rng = crate::util::rng_for(2, "search");
        let rows: Vec<Embedding> = (0..200).map(|_| rand_emb(&mut rng, 8)).collect();
        let ids: Vec<String> = (0..200).map(|i| format!("d{:03}", 199 - i)).collect();
        let m = EmbeddingMatrix::new(8, ids.clone(), rows.clone()).unwrap();
        let q = rows[17].clone();
        let hits = exact_search(&q, &m, 10).unwrap();
        assert_eq!(hits[0].0, 17);
        assert!((hits[0].1 - 1.0).abs() < 1e-6);
        let mut oracle: Vec<(f64, String)> = rows
            .iter()
            .zip(&ids)
            .map(|(r, id)| (cosine(&q, r).unwrap(), id.clone()))
            .collect();
        oracle.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let got: Vec<&str> = hits.iter().map(|h| ids[h.0].as_str()).collect();
        let want: Vec<&str> = oracle.iter().take(10).map(|o| o.1.as_str()).collect();
        assert_eq!(got, want);

        let same = vec![Embedding(vec![1.0, 0.0]); 3];
        let m = EmbeddingMatrix::new(2, vec!["c".into(), "a".into(), "b".into()], same).unwrap();
        let hits = exact_search(&Embedding(vec![1.0, 0.0]), &m, 5).unwrap();
        assert_eq!(hits.iter().map(|h| h.0).collect::<Vec<_>>(), vec![1, 2, 0]);
    }

    #[test]
    fn empty_corpus_search_errors() {
        let m = EmbeddingMatrix::new(2, vec![], vec![]).unwrap();
        assert!(matches!(exact_search(&Embedding(vec![1.0, 0.0]), &m, 3), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn matrix_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.bin");
        let m = EmbeddingMatrix::new(
            2,
            vec!["a:0".into(), "a:1".into()],
            vec![Embedding(vec![0.6, 0.8]), Embedding(vec![1.0, 0.0])],
        )
        .unwrap();
        m.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], b"TKEMBMAT");
        assert_eq!(bytes.len(), 8 + 4 + 4 + 8 + 4 * 4);
        assert_eq!(EmbeddingMatrix::load(&path).unwrap(), m);
    }
}

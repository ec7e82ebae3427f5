//! Desk-scale embedder: seeded feature hashing with column-aware soft
//! threshold features for numbers, followed by a trainable linear
//! projection and L2 normalization.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::{read_f64, read_u32, read_u64, Embedder, Embedding};
use crate::error::{Error, Result};
use crate::util::{hash_parts, rng_for};

pub const DEFAULT_FEATURE_DIM: usize = 1 << 15;
pub const DEFAULT_OUTPUT_DIM: usize = 256;
pub const DEFAULT_GRID_POINTS: usize = 32;
pub const DEFAULT_GRID_WIDTH: f64 = 0.5;
pub const DEFAULT_UNIT_GRID_POINTS: usize = 32;
pub const DEFAULT_UNIT_WIDTH: f64 = 0.05;
pub const DEFAULT_SCALE_KNOTS: usize = 64;

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "be", "by", "equal", "equals", "for", "has", "have", "in", "is",
    "it", "of", "on", "or", "than", "that", "the", "this", "to", "was", "were", "with",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Gt,
    Lt,
}

impl Relation {
    fn tag(&self) -> &'static [u8] {
        match self {
            Relation::Gt => b"gt",
            Relation::Lt => b"lt",
        }
    }
}

fn relation_word(w: &str) -> Option<Relation> {
    match w {
        "greater" | "more" | "above" | "over" | "exceeds" | "exceeding" | "higher" | "larger" | "gt" => {
            Some(Relation::Gt)
        }
        "less" | "below" | "under" | "fewer" | "lower" | "smaller" | "lt" => Some(Relation::Lt),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Token {
    Word(String),
    Number(f64),
    Symbol(char),
}

/// Lowercased split into words, numbers and the comparison symbols
/// `< > =`. A leading `-` or `.` belongs to a number only when it does not
/// follow a letter or digit, so dates split into their parts.
pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.to_lowercase().chars().collect();
    let n = chars.len();
    let digit_at = |i: usize| i < n && chars[i].is_ascii_digit();
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        let c = chars[i];
        let prev_alnum = i > 0 && chars[i - 1].is_alphanumeric();
        if c.is_ascii_digit() || ((c == '-' || c == '.') && !prev_alnum && digit_at(i + 1)) {
            let start = i;
            if c == '-' {
                i += 1;
            }
            while digit_at(i) {
                i += 1;
            }
            if i < n && chars[i] == '.' && digit_at(i + 1) {
                i += 1;
                while digit_at(i) {
                    i += 1;
                }
            }
            let s: String = chars[start..i].iter().collect();
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() => out.push(Token::Number(v)),
                _ => out.push(Token::Word(s)),
            }
        } else if c.is_alphanumeric() || c == '_' {
            let start = i;
            while i < n && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token::Word(chars[start..i].iter().collect()));
        } else {
            if matches!(c, '<' | '>' | '=') {
                out.push(Token::Symbol(c));
            }
            i += 1;
        }
    }
    out
}

/// `sign(v)·log10(1+|v|)`.
pub fn signed_log(v: f64) -> f64 {
    if v == 0.0 {
        return 0.0;
    }
    v.signum() * (1.0 + v.abs()).log10()
}

/// Sorted, deduplicated sparse vector.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVec {
    pub idx: Vec<u32>,
    pub val: Vec<f64>,
}

impl SparseVec {
    fn from_pairs(mut pairs: Vec<(u32, f64)>) -> SparseVec {
        pairs.sort_by_key(|p| p.0);
        let mut out = SparseVec::default();
        for (i, v) in pairs {
            if out.idx.last() == Some(&i) {
                *out.val.last_mut().expect("paired") += v;
            } else {
                out.idx.push(i);
                out.val.push(v);
            }
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.val.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.val.iter().all(|&v| v == 0.0)
    }

    pub fn dot(&self, other: &SparseVec) -> f64 {
        let (mut i, mut j, mut s) = (0, 0, 0.0);
        while i < self.idx.len() && j < other.idx.len() {
            match self.idx[i].cmp(&other.idx[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    s += self.val[i] * other.val[j];
                    i += 1;
                    j += 1;
                }
            }
        }
        s
    }

    pub fn nnz(&self) -> usize {
        self.idx.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeskConfig {
    pub feature_dim: usize,
    pub output_dim: usize,
    pub hash_seed: u64,
    /// Log-scale grid for numbers under keys without a fitted scale.
    pub grid: Vec<f64>,
    pub grid_width: f64,
    /// Grid over the fitted `[0, 1]` scale.
    pub unit_grid: Vec<f64>,
    pub unit_width: f64,
    /// Per-key quantile knots `(value, level)`, both strictly ascending.
    pub scales: BTreeMap<String, Vec<(f64, f64)>>,
}

pub fn default_unit_grid() -> Vec<f64> {
    let g = DEFAULT_UNIT_GRID_POINTS;
    (0..g).map(|j| -0.05 + 1.1 * j as f64 / (g - 1) as f64).collect()
}

/// Empirical mid-rank CDF at each distinct value, thinned to at most
/// `knots + 1` points. `None` with fewer than two distinct values.
pub fn fit_scale(values: &[f64], knots: usize) -> Option<Vec<(f64, f64)>> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut pts: Vec<(f64, f64)> = Vec::new();
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j < v.len() && v[j] == v[i] {
            j += 1;
        }
        pts.push((v[i], (i + j) as f64 / 2.0 / n));
        i = j;
    }
    if pts.len() < 2 {
        return None;
    }
    if pts.len() > knots + 1 {
        let last = pts.len() - 1;
        let mut picked: Vec<(f64, f64)> = (0..=knots)
            .map(|k| pts[(k as f64 * last as f64 / knots as f64).round() as usize])
            .collect();
        picked.dedup_by(|a, b| a.0 == b.0);
        pts = picked;
    }
    Some(pts)
}

/// Piecewise-linear position of `v` on a fitted scale, extrapolated
/// beyond the end knots with the overall slope and clamped to `[-0.5, 1.5]`.
pub fn scale_position(knots: &[(f64, f64)], v: f64) -> f64 {
    let (first, last) = (knots[0], knots[knots.len() - 1]);
    let z = if v <= first.0 || v >= last.0 {
        let slope = (last.1 - first.1) / (last.0 - first.0);
        if v <= first.0 {
            first.1 + (v - first.0) * slope
        } else {
            last.1 + (v - last.0) * slope
        }
    } else {
        let k = knots.partition_point(|p| p.0 <= v);
        let (a, b) = (knots[k - 1], knots[k]);
        a.1 + (v - a.0) / (b.0 - a.0) * (b.1 - a.1)
    };
    z.clamp(-0.5, 1.5)
}

pub fn default_grid() -> Vec<f64> {
    let g = DEFAULT_GRID_POINTS;
    (0..g).map(|j| -4.0 + 10.0 * j as f64 / (g - 1) as f64).collect()
}

impl Default for DeskConfig {
    fn default() -> Self {
        DeskConfig {
            feature_dim: DEFAULT_FEATURE_DIM,
            output_dim: DEFAULT_OUTPUT_DIM,
            hash_seed: 42,
            grid: default_grid(),
            grid_width: DEFAULT_GRID_WIDTH,
            unit_grid: default_unit_grid(),
            unit_width: DEFAULT_UNIT_WIDTH,
            scales: BTreeMap::new(),
        }
    }
}

enum Item<'a> {
    Word(&'a str),
    Symbol(char),
    Number { value: f64, key: &'a str, rel: Option<Relation> },
}

/// Walks the tokens of `text`, attaching to each number the closest
/// preceding content word and any comparison seen since that word.
fn scan(text: &str, mut f: impl FnMut(Item<'_>)) {
    let mut key = String::new();
    let mut rel: Option<Relation> = None;
    for tok in tokenize(text) {
        match tok {
            Token::Word(w) => {
                f(Item::Word(&w));
                if let Some(r) = relation_word(&w) {
                    rel = Some(r);
                } else if !STOPWORDS.contains(&w.as_str()) {
                    key = w;
                    rel = None;
                }
            }
            Token::Symbol(c) => {
                f(Item::Symbol(c));
                match c {
                    '>' => rel = Some(Relation::Gt),
                    '<' => rel = Some(Relation::Lt),
                    _ => {}
                }
            }
            Token::Number(value) => f(Item::Number { value, key: &key, rel }),
        }
    }
}

impl DeskConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.feature_dim.is_power_of_two() {
            return Err(Error::Config(format!("feature_dim {} is not a power of two", self.feature_dim)));
        }
        if self.feature_dim > u32::MAX as usize {
            return Err(Error::Config("feature_dim too large".into()));
        }
        if self.output_dim == 0 {
            return Err(Error::Config("output_dim must be positive".into()));
        }
        if self.grid.is_empty() || self.grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("threshold grid must be non-empty and strictly ascending".into()));
        }
        if !(self.grid_width > 0.0) {
            return Err(Error::Config("grid width must be positive".into()));
        }
        if self.unit_grid.is_empty() || self.unit_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("unit grid must be non-empty and strictly ascending".into()));
        }
        if !(self.unit_width > 0.0) {
            return Err(Error::Config("unit grid width must be positive".into()));
        }
        for (k, knots) in &self.scales {
            if knots.len() < 2 || knots.windows(2).any(|w| w[0].0 >= w[1].0 || w[0].1 >= w[1].1) {
                return Err(Error::Config(format!("scale for `{k}` is not strictly ascending")));
            }
        }
        Ok(())
    }

    fn bin(&self, parts: &[&[u8]]) -> u32 {
        (hash_parts(self.hash_seed, parts) & (self.feature_dim as u64 - 1)) as u32
    }

    /// Fits a quantile scale for every key that carries at least two
    /// distinct numbers across `texts`, replacing any earlier fit.
    pub fn fit_scales<S: AsRef<str>>(&mut self, texts: &[S], knots: usize) {
        let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for t in texts {
            scan(t.as_ref(), |it| {
                if let Item::Number { value, key, .. } = it {
                    if !key.is_empty() {
                        values.entry(key.to_string()).or_default().push(value);
                    }
                }
            });
        }
        self.scales = values
            .into_iter()
            .filter_map(|(k, v)| fit_scale(&v, knots).map(|s| (k, s)))
            .collect();
    }

    /// Grid responses `tanh((x − g_j)/w)`: `x` is the fitted position on
    /// the key's scale when one exists, `sign(v)·log10(1+|v|)` otherwise.
    pub fn grid_response(&self, key: &str, v: f64) -> Vec<f64> {
        match self.scales.get(key) {
            Some(knots) => {
                let z = scale_position(knots, v);
                self.unit_grid.iter().map(|g| ((z - g) / self.unit_width).tanh()).collect()
            }
            None => {
                let l = signed_log(v);
                self.grid.iter().map(|g| ((l - g) / self.grid_width).tanh()).collect()
            }
        }
    }

    /// Hashed, L2-normalized features. Every word, number and comparison
    /// symbol adds a count to its bin. Numbers also add grid features keyed
    /// by the closest preceding content word; when a comparison word sits
    /// between that word and the number, a second relation-specific grid
    /// and a relation indicator are added.
    pub fn featurize(&self, text: &str) -> SparseVec {
        let mut pairs: Vec<(u32, f64)> = Vec::new();
        scan(text, |it| match it {
            Item::Word(w) => pairs.push((self.bin(&[b"w", w.as_bytes()]), 1.0)),
            Item::Symbol(c) => {
                let mut b = [0u8; 4];
                pairs.push((self.bin(&[b"w", c.encode_utf8(&mut b).as_bytes()]), 1.0));
            }
            Item::Number { value, key, rel } => {
                let canon = format!("{}", if value == 0.0 { 0.0 } else { value });
                pairs.push((self.bin(&[b"w", canon.as_bytes()]), 1.0));
                let k = key.as_bytes();
                for (j, r) in self.grid_response(key, value).into_iter().enumerate() {
                    let jb = (j as u32).to_le_bytes();
                    pairs.push((self.bin(&[b"g", k, &jb]), r));
                    if let Some(rl) = rel {
                        pairs.push((self.bin(&[b"r", k, rl.tag(), &jb]), r));
                    }
                }
                if let Some(rl) = rel {
                    pairs.push((self.bin(&[b"i", k, rl.tag()]), 1.0));
                }
            }
        });
        let mut sv = SparseVec::from_pairs(pairs);
        let norm = sv.norm();
        if norm > 0.0 {
            for v in sv.val.iter_mut() {
                *v /= norm;
            }
        }
        sv
    }
}

/// Trainable projection `W` (d × m) over hashed features. Stored column by
/// column so sparse products touch contiguous memory.
#[derive(Debug, Clone, PartialEq)]
pub struct DeskEmbedder {
    pub config: DeskConfig,
    /// `w[i*d .. (i+1)*d]` is column `i` of `W`. Values are always exactly
    /// representable as `f32` outside of an optimizer step.
    w: Vec<f64>,
}

const CKPT_MAGIC: &[u8; 8] = b"TKDESKW1";
const CKPT_VERSION: u32 = 1;

impl DeskEmbedder {
    /// Seeded Gaussian initialization with scale `1/√m`, rounded to `f32`.
    pub fn new(config: DeskConfig, init_seed: u64) -> Result<DeskEmbedder> {
        config.validate()?;
        let m = config.feature_dim;
        let d = config.output_dim;
        let scale = 1.0 / (m as f64).sqrt();
        let mut rng = rng_for(init_seed, "desk-init");
        let w = (0..m * d)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                f64::from((z * scale) as f32)
            })
            .collect();
        Ok(DeskEmbedder { config, w })
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim
    }

    pub fn featurize(&self, text: &str) -> SparseVec {
        self.config.featurize(text)
    }

    pub fn column(&self, i: usize) -> &[f64] {
        let d = self.config.output_dim;
        &self.w[i * d..(i + 1) * d]
    }

    pub fn column_mut(&mut self, i: usize) -> &mut [f64] {
        let d = self.config.output_dim;
        &mut self.w[i * d..(i + 1) * d]
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.w
    }

    /// `W·f` before normalization.
    pub fn project(&self, f: &SparseVec) -> Vec<f64> {
        let d = self.config.output_dim;
        let mut u = vec![0.0; d];
        for (&i, &v) in f.idx.iter().zip(&f.val) {
            let col = self.column(i as usize);
            for r in 0..d {
                u[r] += v * col[r];
            }
        }
        u
    }

    pub fn embed_one(&self, text: &str) -> Embedding {
        let f = self.featurize(text);
        if f.is_zero() {
            log::debug!("text with no features embedded as basis vector");
        }
        Embedding::from_unnormalized(&self.project(&f))
    }

    /// Rounds every weight to the nearest `f32`.
    pub fn quantize(&mut self) {
        for x in self.w.iter_mut() {
            *x = f64::from(*x as f32);
        }
    }

    /// SHA-256 over the configuration and the `f32` weights, as hex.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.config.feature_dim as u64).to_le_bytes());
        h.update((self.config.output_dim as u64).to_le_bytes());
        h.update(self.config.hash_seed.to_le_bytes());
        for g in &self.config.grid {
            h.update(g.to_le_bytes());
        }
        h.update(self.config.grid_width.to_le_bytes());
        let mut cfg = Vec::new();
        write_scales(&mut cfg, &self.config).expect("in-memory write");
        h.update(&cfg);
        let mut buf = Vec::with_capacity(self.w.len() * 4);
        for x in &self.w {
            buf.extend_from_slice(&(*x as f32).to_le_bytes());
        }
        h.update(&buf);
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Checkpoint: magic, version, m, d, hash seed, log grid and width,
    /// unit grid and width, fitted scales, then `W` row-major as
    /// little-endian `f32`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        let c = &self.config;
        out.write_all(CKPT_MAGIC)?;
        out.write_all(&CKPT_VERSION.to_le_bytes())?;
        out.write_all(&(c.feature_dim as u64).to_le_bytes())?;
        out.write_all(&(c.output_dim as u32).to_le_bytes())?;
        out.write_all(&c.hash_seed.to_le_bytes())?;
        out.write_all(&(c.grid.len() as u32).to_le_bytes())?;
        for g in &c.grid {
            out.write_all(&g.to_le_bytes())?;
        }
        out.write_all(&c.grid_width.to_le_bytes())?;
        write_scales(&mut out, c)?;
        let (m, d) = (c.feature_dim, c.output_dim);
        let mut row = Vec::with_capacity(m * 4);
        for r in 0..d {
            row.clear();
            for i in 0..m {
                row.extend_from_slice(&(self.w[i * d + r] as f32).to_le_bytes());
            }
            out.write_all(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<DeskEmbedder> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CKPT_MAGIC {
            return Err(Error::Format(format!("{} is not a desk checkpoint", path.display())));
        }
        let version = read_u32(&mut r)?;
        if version != CKPT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let m = read_u64(&mut r)? as usize;
        let d = read_u32(&mut r)? as usize;
        let hash_seed = read_u64(&mut r)?;
        let g = read_u32(&mut r)? as usize;
        let grid = (0..g).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        let grid_width = read_f64(&mut r)?;
        let u = read_u32(&mut r)? as usize;
        let unit_grid = (0..u).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        let unit_width = read_f64(&mut r)?;
        let keys = read_u32(&mut r)? as usize;
        let mut scales = BTreeMap::new();
        for _ in 0..keys {
            let len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Format("scale key is not UTF-8".into()))?;
            let n = read_u32(&mut r)? as usize;
            let knots = (0..n)
                .map(|_| Ok((read_f64(&mut r)?, read_f64(&mut r)?)))
                .collect::<Result<Vec<_>>>()?;
            scales.insert(name, knots);
        }
        let config = DeskConfig {
            feature_dim: m,
            output_dim: d,
            hash_seed,
            grid,
            grid_width,
            unit_grid,
            unit_width,
            scales,
        };
        config.validate()?;
        let mut w = vec![0.0; m * d];
        let mut row = vec![0u8; m * 4];
        for rr in 0..d {
            r.read_exact(&mut row)?;
            for i in 0..m {
                let b = [row[4 * i], row[4 * i + 1], row[4 * i + 2], row[4 * i + 3]];
                w[i * d + rr] = f64::from(f32::from_le_bytes(b));
            }
        }
        Ok(DeskEmbedder { config, w })
    }
}

fn write_scales(out: &mut impl Write, c: &DeskConfig) -> std::io::Result<()> {
    out.write_all(&(c.unit_grid.len() as u32).to_le_bytes())?;
    for g in &c.unit_grid {
        out.write_all(&g.to_le_bytes())?;
    }
    out.write_all(&c.unit_width.to_le_bytes())?;
    out.write_all(&(c.scales.len() as u32).to_le_bytes())?;
    for (k, knots) in &c.scales {
        out.write_all(&(k.len() as u32).to_le_bytes())?;
        out.write_all(k.as_bytes())?;
        out.write_all(&(knots.len() as u32).to_le_bytes())?;
        for (v, l) in knots {
            out.write_all(&v.to_le_bytes())?;
            out.write_all(&l.to_le_bytes())?;
        }
    }
    Ok(())
}

impl Embedder for DeskEmbedder {
    fn dim(&self) -> usize {
        self.config.output_dim
    }

    fn id(&self) -> String {
        "desk".into()
    }

    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        Ok(texts.par_iter().map(|t| self.embed_one(t)).collect())
    }
}

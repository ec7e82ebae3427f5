//! Pipeline stages. Each stage reads its predecessors' artifacts from the
//! run directory and writes its own; all artifacts carry the run header.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tabkit_core::analysis::{
    cluster_ratio, default_cases, noise_robustness, numeric_sensitivity, template_robustness, ClusterStats,
    NoisePlan, NoisePool, NoisePoint, SensitivityResult,
};
use tabkit_core::embed::{
    embed_documents, DeskConfig, DeskEmbedder, Embedder, EmbeddingMatrix, RemoteEmbedder,
};
use tabkit_core::eval::{
    eval_classification, eval_retrieval, overall, stratified_split, ClassDataset,
    ClassFilters, ClassificationReport, OverallReport, RetrievalReport,
};
use tabkit_core::io::{self, ArtifactHeader};
use tabkit_core::mining::{
    build_classification_triplets, build_retrieval_triplets, count_invalid_negatives, mix_dataset,
    resolve_triplets, LabeledDoc, MiningConfig, ResolvedTriplet, Task, Triplet,
};
use tabkit_core::query::{generate_queries, GenerationConfig, GenerationStats, QrelSet, Query};
use tabkit_core::table::{build_corpus, read_delimited, Corpus, CorpusOptions, Document, Table};
use tabkit_core::target::{candidate_targets, choose_target, make_labeled_documents, TargetSpec};
use tabkit_core::train::{train, TrainReport};
use tabkit_core::util::{derive_seed, rng_for};

use crate::config::{ConfigErrors, EmbedderKind, RunConfig};

pub const TABLES: &str = "tables.jsonl";
pub const CORPUS: &str = "corpus.jsonl";
pub const QUERIES: &str = "queries.jsonl";
pub const QRELS: &str = "qrels.tsv";
pub const TRAIN_QUERIES: &str = "train_queries.jsonl";
pub const TRAIN_QRELS: &str = "train_qrels.tsv";
pub const TARGETS: &str = "targets.jsonl";
pub const LABELED: &str = "labeled.jsonl";
pub const BENCH: &str = "bench.json";
pub const BASE_CKPT: &str = "base.ckpt";
pub const TRIPLETS: &str = "triplets.jsonl";
pub const MINE: &str = "mine.json";
pub const MODEL_CKPT: &str = "model.ckpt";
pub const TRAIN: &str = "train.json";
pub const EVAL: &str = "eval.json";
pub const ANALYSIS: &str = "analysis.json";
pub const SENSITIVITY_TSV: &str = "sensitivity.tsv";
pub const NOISE_TSV: &str = "noise.tsv";
pub const TEMPLATES_TSV: &str = "templates.tsv";
pub const REPORT_TXT: &str = "report.txt";
pub const REPORT_JSON: &str = "report.json";

pub const BASE_MODEL: &str = "desk-base";
pub const TRAINED_MODEL: &str = "desk-trained";
pub const REMOTE_MODEL: &str = "remote";

/// Problems the user can fix: bad config, missing inputs, stages run out
/// of order. The binary maps these to exit code 2.
#[derive(Debug, thiserror::Error)]
pub enum UsageError {
    #[error(transparent)]
    Config(#[from] ConfigErrors),
    #[error("input {0} does not exist")]
    MissingInput(PathBuf),
    #[error("no CSV or TSV inputs configured")]
    NoInputs,
    #[error("missing upstream artifact {path} (run `{stage}` first)")]
    MissingArtifact { path: PathBuf, stage: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    BuildBench,
    Mine,
    Train,
    Eval,
    Analyze,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::BuildBench,
        Stage::Mine,
        Stage::Train,
        Stage::Eval,
        Stage::Analyze,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::BuildBench => "build-bench",
            Stage::Mine => "mine",
            Stage::Train => "train",
            Stage::Eval => "eval",
            Stage::Analyze => "analyze",
            Stage::Report => "report",
        }
    }
}

/// An opened run: validated config, resolved inputs and its directory.
#[derive(Debug, Clone)]
pub struct Run {
    pub cfg: RunConfig,
    pub inputs: Vec<PathBuf>,
    pub noise_inputs: Vec<PathBuf>,
    pub hash: String,
    pub dir: PathBuf,
    pub header: ArtifactHeader,
}

fn is_table_file(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("csv") | Some("tsv")
    )
}

/// Files as given plus the CSV/TSV files of every directory, sorted.
pub fn expand_inputs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .with_context(|| format!("listing {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.is_file() && is_table_file(f))
                .collect();
            found.sort();
            out.extend(found);
        } else if p.is_file() {
            out.push(p.clone());
        } else {
            return Err(UsageError::MissingInput(p.clone()).into());
        }
    }
    if out.is_empty() {
        return Err(UsageError::NoInputs.into());
    }
    Ok(out)
}

fn dataset_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

impl Run {
    /// Resolves inputs, hashes config plus input contents, and creates
    /// `output_dir/<hash prefix>`.
    pub fn open(cfg: RunConfig) -> Result<Run> {
        cfg.validate().map_err(UsageError::from)?;
        let inputs = expand_inputs(&cfg.inputs)?;
        let noise_inputs = if cfg.analysis.noise_inputs.is_empty() {
            Vec::new()
        } else {
            expand_inputs(&cfg.analysis.noise_inputs)?
        };
        let mut digests = Vec::new();
        for p in &inputs {
            digests.push((dataset_id(p), file_digest(p)?));
        }
        for p in &noise_inputs {
            digests.push((format!("noise/{}", dataset_id(p)), file_digest(p)?));
        }
        let hash = cfg.hash(&digests);
        let dir = cfg.output_dir.join(&hash[..16]);
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        std::fs::write(dir.join("config.toml"), cfg.to_toml())?;
        let header = ArtifactHeader::new(&hash, cfg.seed);
        Ok(Run {
            cfg,
            inputs,
            noise_inputs,
            hash,
            dir,
            header,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn need(&self, name: &str, stage: Stage) -> Result<PathBuf> {
        let p = self.path(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(UsageError::MissingArtifact {
                path: p,
                stage: stage.name(),
            }
            .into())
        }
    }

    pub fn run_stage(&self, stage: Stage) -> Result<String> {
        match stage {
            Stage::Ingest => ingest(self),
            Stage::BuildBench => build_bench(self),
            Stage::Mine => mine(self),
            Stage::Train => train_stage(self),
            Stage::Eval => eval_stage(self),
            Stage::Analyze => analyze(self),
            Stage::Report => report(self),
        }
    }

    pub fn load_corpus(&self) -> Result<Corpus> {
        let (_, docs): (_, Vec<Document>) = io::read_jsonl(&self.need(CORPUS, Stage::Ingest)?)?;
        Ok(Corpus::from_documents(docs, self.cfg.corpus.cap)?)
    }

    pub fn load_tables(&self) -> Result<Vec<Table>> {
        Ok(io::read_jsonl(&self.need(TABLES, Stage::Ingest)?)?.1)
    }

    pub fn load_queries(&self, train: bool) -> Result<(Vec<Query>, QrelSet)> {
        let (q, r) = if train { (TRAIN_QUERIES, TRAIN_QRELS) } else { (QUERIES, QRELS) };
        let (_, queries) = io::read_jsonl(&self.need(q, Stage::BuildBench)?)?;
        let (_, qrels) = io::read_qrels(&self.need(r, Stage::BuildBench)?)?;
        Ok((queries, qrels))
    }

    pub fn load_labeled(&self) -> Result<(Vec<TargetSpec>, Vec<LabeledRecord>)> {
        let (_, targets) = io::read_jsonl(&self.need(TARGETS, Stage::BuildBench)?)?;
        let (_, labeled) = io::read_jsonl(&self.need(LABELED, Stage::BuildBench)?)?;
        Ok((targets, labeled))
    }

    pub fn load_desk(&self, name: &str, stage: Stage) -> Result<DeskEmbedder> {
        Ok(DeskEmbedder::load(&self.need(name, stage)?)?)
    }

    fn remote(&self) -> Result<Option<RemoteEmbedder>> {
        if self.cfg.embedder.kind == EmbedderKind::Remote {
            Ok(Some(RemoteEmbedder::new(self.cfg.remote_config())?))
        } else {
            Ok(None)
        }
    }

    /// Models scored by `eval` and `analyze`, in report order.
    fn models(&self, stage: Stage) -> Result<Vec<(String, Box<dyn Embedder>)>> {
        let mut out: Vec<(String, Box<dyn Embedder>)> = vec![
            (BASE_MODEL.into(), Box::new(self.load_desk(BASE_CKPT, Stage::Mine)?)),
            (TRAINED_MODEL.into(), Box::new(self.load_desk(MODEL_CKPT, Stage::Train)?)),
        ];
        if let Some(r) = self.remote()? {
            out.push((REMOTE_MODEL.into(), Box::new(r)));
        }
        log::debug!("{} models for {}", out.len(), stage.name());
        Ok(out)
    }
}

/// Tab-delimited for `.tsv`, comma otherwise; the dataset id is the file stem.
pub fn read_tables(paths: &[PathBuf]) -> Result<Vec<Table>> {
    paths
        .iter()
        .map(|p| {
            let delim = if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("tsv")) {
                b'\t'
            } else {
                b','
            };
            read_delimited(p, delim, &dataset_id(p)).with_context(|| format!("reading {}", p.display()))
        })
        .collect()
}

fn ingest(run: &Run) -> Result<String> {
    let c = &run.cfg.corpus;
    let tables = read_tables(&run.inputs)?;
    let opts = CorpusOptions {
        cap: c.cap,
        max_words: c.max_words,
        precision: c.precision,
        seed: run.cfg.seed,
    };
    let corpus = build_corpus(&tables, &opts)?;
    io::write_jsonl(&run.path(TABLES), &run.header, &tables)?;
    io::write_jsonl(&run.path(CORPUS), &run.header, &corpus.documents)?;
    Ok(format!(
        "ingest: {} tables, {} documents -> {}",
        tables.len(),
        corpus.len(),
        run.dir.display()
    ))
}

/// A target-masked document and its class label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRecord {
    pub label: String,
    pub doc: Document,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub eval: GenerationStats,
    pub train: GenerationStats,
    /// Training queries dropped because an evaluation query has the same text.
    pub train_overlap_dropped: usize,
    pub targets: usize,
    pub skipped_datasets: Vec<String>,
}

fn build_bench(run: &Run) -> Result<String> {
    let cfg = &run.cfg;
    let tables = run.load_tables()?;
    let corpus = run.load_corpus()?;
    let gen = |total, seed, prefix: &str| GenerationConfig {
        total,
        seed,
        qid_prefix: prefix.to_string(),
        template: cfg.queries.template,
        attempts_per_query: cfg.queries.attempts_per_query,
    };
    let eval = generate_queries(&corpus, &gen(cfg.queries.eval_total, cfg.seed, "q"))?;
    let mut train = generate_queries(
        &corpus,
        &gen(cfg.queries.train_total, derive_seed(cfg.seed, "queries/train"), "t"),
    )?;
    let eval_texts: BTreeSet<&str> = eval.queries.iter().map(|q| q.text.as_str()).collect();
    let before = train.queries.len();
    train.queries.retain(|q| !eval_texts.contains(q.text.as_str()));
    let kept: BTreeSet<&str> = train.queries.iter().map(|q| q.qid.as_str()).collect();
    train.qrels.0.retain(|qid, _| kept.contains(qid.as_str()));
    let dropped = before - train.queries.len();

    let mut targets = Vec::new();
    let mut labeled = Vec::new();
    let mut skipped = Vec::new();
    for t in &tables {
        let spec = candidate_targets(t).and_then(|c| choose_target(&c, t, cfg.targets.categorical_probability, cfg.seed));
        let spec = match spec {
            Ok(s) => s,
            Err(e) => {
                log::warn!("dataset `{}` has no usable target: {e}", t.dataset_id);
                skipped.push(t.dataset_id.clone());
                continue;
            }
        };
        for (doc, label) in make_labeled_documents(t, &spec, cfg.corpus.precision)? {
            labeled.push(LabeledRecord { label, doc });
        }
        targets.push(spec);
    }

    io::write_jsonl(&run.path(QUERIES), &run.header, &eval.queries)?;
    io::write_qrels(&run.path(QRELS), &run.header, &eval.qrels)?;
    io::write_jsonl(&run.path(TRAIN_QUERIES), &run.header, &train.queries)?;
    io::write_qrels(&run.path(TRAIN_QRELS), &run.header, &train.qrels)?;
    io::write_jsonl(&run.path(TARGETS), &run.header, &targets)?;
    io::write_jsonl(&run.path(LABELED), &run.header, &labeled)?;
    let summary = BenchSummary {
        eval: eval.stats,
        train: train.stats,
        train_overlap_dropped: dropped,
        targets: targets.len(),
        skipped_datasets: skipped,
    };
    io::write_json(&run.path(BENCH), &run.header, &summary)?;
    Ok(format!(
        "build-bench: {} eval queries, {} train queries, {} targets, {} labeled rows",
        eval.queries.len(),
        train.queries.len(),
        targets.len(),
        labeled.len()
    ))
}

/// Untrained desk embedder: scales fitted on the corpus, seeded weights.
pub fn base_embedder(cfg: &RunConfig, corpus: &Corpus) -> Result<DeskEmbedder> {
    let mut dc = DeskConfig {
        feature_dim: cfg.embedder.feature_dim,
        output_dim: cfg.embedder.output_dim,
        hash_seed: cfg.seed,
        ..DeskConfig::default()
    };
    let texts: Vec<&str> = corpus.documents.iter().map(|d| d.text.as_str()).collect();
    dc.fit_scales(&texts, cfg.embedder.scale_knots);
    Ok(DeskEmbedder::new(dc, derive_seed(cfg.seed, "desk/init"))?)
}

/// Labeled rows grouped per target, in target order.
pub fn group_labeled<'a>(
    targets: &'a [TargetSpec],
    labeled: &'a [LabeledRecord],
) -> Vec<(&'a TargetSpec, Vec<&'a LabeledRecord>)> {
    targets
        .iter()
        .map(|t| {
            let rows = labeled.iter().filter(|r| r.doc.dataset_id == t.dataset_id).collect();
            (t, rows)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MineSummary {
    pub retrieval: usize,
    pub classification: usize,
    pub classification_per_dataset: usize,
    pub zero_negative: usize,
    pub short: usize,
    pub invalid_negatives: usize,
}

fn mine(run: &Run) -> Result<String> {
    let cfg = &run.cfg;
    let corpus = run.load_corpus()?;
    let (queries, qrels) = run.load_queries(true)?;
    let (targets, labeled) = run.load_labeled()?;
    let base = base_embedder(cfg, &corpus)?;
    base.save(&run.path(BASE_CKPT))?;
    io::write_meta(&run.path(BASE_CKPT), &run.header)?;
    let remote = run.remote()?;
    let miner: &dyn Embedder = match &remote {
        Some(r) => r,
        None => &base,
    };
    let mcfg = MiningConfig {
        top_k: cfg.mining.top_k,
        h: cfg.mining.h,
    };
    let matrix = embed_documents(miner, &corpus.documents, 256)?;
    let ret = build_retrieval_triplets(&queries, &qrels, &corpus, &matrix, miner, &mcfg)?;

    let [r0, r1] = cfg.mining.mix_ratio;
    let groups = group_labeled(&targets, &labeled);
    let per_dataset = if groups.is_empty() {
        0
    } else {
        (ret.triplets.len() * r1).div_ceil(r0 * groups.len())
    };
    let mut cls = Vec::new();
    let mut zero = ret.zero_negative;
    let mut short = ret.short;
    for (spec, rows) in &groups {
        let labels: Vec<String> = rows.iter().map(|r| r.label.clone()).collect();
        let (train_idx, _) = match stratified_split(&labels, cfg.eval.test_fraction, cfg.seed) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("no classification triplets for `{}`: {e}", spec.dataset_id);
                continue;
            }
        };
        let pool: Vec<LabeledDoc> = train_idx
            .iter()
            .map(|&i| LabeledDoc {
                doc: rows[i].doc.clone(),
                label: rows[i].label.clone(),
            })
            .collect();
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(&mut rng_for(cfg.seed, &format!("mine/anchors/{}", spec.dataset_id)));
        order.truncate(per_dataset);
        order.sort_unstable();
        let anchors: Vec<LabeledDoc> = order.iter().map(|&i| pool[i].clone()).collect();
        let out = build_classification_triplets(&spec.column, &anchors, &pool, miner, &mcfg)?;
        zero += out.zero_negative;
        short += out.short;
        cls.extend(out.triplets);
    }
    let n_ret = ret.triplets.len();
    let n_cls = cls.len();
    let mixed = mix_dataset(ret.triplets, cls, (r0, r1), cfg.seed)?;

    let by_qid: BTreeMap<String, Query> = queries.into_iter().map(|q| (q.qid.clone(), q)).collect();
    let label_of: BTreeMap<String, String> = labeled.iter().map(|r| (r.doc.doc_id.clone(), r.label.clone())).collect();
    let invalid = count_invalid_negatives(&mixed, &by_qid, &corpus, &label_of)?;
    if invalid > 0 {
        log::error!("{invalid} mined negatives satisfy their query");
    }
    io::write_jsonl(&run.path(TRIPLETS), &run.header, &mixed)?;
    let summary = MineSummary {
        retrieval: n_ret,
        classification: n_cls,
        classification_per_dataset: per_dataset,
        zero_negative: zero,
        short,
        invalid_negatives: invalid,
    };
    io::write_json(&run.path(MINE), &run.header, &summary)?;
    Ok(format!(
        "mine: {n_ret} retrieval + {n_cls} classification triplets, {zero} without negatives, {invalid} invalid negatives"
    ))
}

/// Documents every triplet can reference: corpus rows and masked rows.
fn all_documents(corpus: &Corpus, labeled: &[LabeledRecord]) -> Vec<Document> {
    corpus
        .documents
        .iter()
        .cloned()
        .chain(labeled.iter().map(|r| r.doc.clone()))
        .collect()
}

fn train_stage(run: &Run) -> Result<String> {
    let corpus = run.load_corpus()?;
    let (_, labeled) = run.load_labeled()?;
    let (_, qrels) = run.load_queries(true)?;
    let (_, triplets): (_, Vec<Triplet>) = io::read_jsonl(&run.need(TRIPLETS, Stage::Mine)?)?;
    let mut emb = run.load_desk(BASE_CKPT, Stage::Mine)?;
    let docs = all_documents(&corpus, &labeled);
    let resolved = resolve_triplets(&triplets, docs.iter())?;
    // A peer's positive collides when it is relevant to this query too.
    let collides = |a: &ResolvedTriplet, b: &ResolvedTriplet| match a.triplet.task {
        Task::Retrieval => a
            .triplet
            .qid
            .as_deref()
            .and_then(|q| qrels.get(q))
            .is_some_and(|rel| rel.contains(&b.triplet.positive_doc_id)),
        Task::Classification => b.triplet.task == Task::Classification && a.triplet.query == b.triplet.query,
    };
    let report: TrainReport = train(&mut emb, &resolved, &run.cfg.train_config(), &collides)?;
    emb.save(&run.path(MODEL_CKPT))?;
    io::write_meta(&run.path(MODEL_CKPT), &run.header)?;
    io::write_json(&run.path(TRAIN), &run.header, &report)?;
    Ok(format!(
        "train: {} steps, final epoch loss {:.4}, {} in-batch collisions, {:.1}s",
        report.steps, report.final_mean_loss, report.collisions, report.wall_time_secs
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEval {
    pub model: String,
    pub retrieval: RetrievalReport,
    pub classification: ClassificationReport,
    pub overall: OverallReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub models: Vec<ModelEval>,
}

pub fn class_filters(cfg: &RunConfig) -> ClassFilters {
    ClassFilters {
        max_classes: cfg.eval.max_classes,
        max_ratio: cfg.eval.max_class_ratio,
        test_fraction: cfg.eval.test_fraction,
        seed: cfg.seed,
    }
}

fn class_datasets(
    embedder: &dyn Embedder,
    groups: &[(&TargetSpec, Vec<&LabeledRecord>)],
) -> Result<Vec<(ClassDataset, Vec<String>)>> {
    groups
        .iter()
        .map(|(spec, rows)| {
            let docs: Vec<Document> = rows.iter().map(|r| r.doc.clone()).collect();
            let m = embed_documents(embedder, &docs, 256)?;
            let embeddings: Vec<Vec<f64>> = (0..m.len())
                .map(|i| m.row(i).iter().map(|&x| f64::from(x)).collect())
                .collect();
            let labels: Vec<String> = rows.iter().map(|r| r.label.clone()).collect();
            Ok((
                ClassDataset {
                    dataset_id: spec.dataset_id.clone(),
                    embeddings,
                    labels: labels.clone(),
                },
                labels,
            ))
        })
        .collect()
}

fn eval_stage(run: &Run) -> Result<String> {
    let corpus = run.load_corpus()?;
    let (queries, qrels) = run.load_queries(false)?;
    let (targets, labeled) = run.load_labeled()?;
    let groups = group_labeled(&targets, &labeled);
    let filters = class_filters(&run.cfg);
    let mut models = Vec::new();
    for (name, emb) in run.models(Stage::Eval)? {
        let matrix = embed_documents(emb.as_ref(), &corpus.documents, 256)?;
        let emb_path = run.path(&format!("embeddings/{name}.emb"));
        std::fs::create_dir_all(run.path("embeddings"))?;
        matrix.save(&emb_path)?;
        io::write_meta(&emb_path, &run.header)?;
        let retrieval = eval_retrieval(emb.as_ref(), &matrix, &queries, &qrels)?;
        let datasets: Vec<ClassDataset> = class_datasets(emb.as_ref(), &groups)?.into_iter().map(|d| d.0).collect();
        let classification = eval_classification(&datasets, &filters)?;
        let o = overall(&classification, &retrieval);
        log::info!("{name}: overall {:.4}", o.overall);
        models.push(ModelEval {
            model: name,
            retrieval,
            classification,
            overall: o,
        });
    }
    io::write_json(&run.path(EVAL), &run.header, &EvalOutput { models: models.clone() })?;
    let parts: Vec<String> = models
        .iter()
        .map(|m| format!("{} nDCG@10 {:.4}", m.model, m.retrieval.ndcg_at_10))
        .collect();
    Ok(format!("eval: {}", parts.join(", ")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateScore {
    pub template: String,
    pub ndcg_at_10: f64,
    pub mrr_at_10: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelAnalysis {
    pub model: String,
    pub sensitivity: Vec<SensitivityResult>,
    pub mean_rho: f64,
    pub noise: Vec<NoisePoint>,
    pub templates: Vec<TemplateScore>,
    pub template_dispersion: f64,
    /// Per dataset on the target-masked rows, keyed by dataset id.
    pub clusters: BTreeMap<String, ClusterStats>,
    pub mean_cluster_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOutput {
    pub cases: usize,
    pub models: Vec<ModelAnalysis>,
}

fn analyze(run: &Run) -> Result<String> {
    let cfg = &run.cfg;
    let corpus = run.load_corpus()?;
    let (queries, qrels) = run.load_queries(false)?;
    let (targets, labeled) = run.load_labeled()?;
    let groups = group_labeled(&targets, &labeled);
    let cases = default_cases(&corpus, cfg.analysis.sensitivity_columns);
    let mut pool = NoisePool::from_documents(&corpus.documents);
    pool.extend(NoisePool::from_tables(&read_tables(&run.noise_inputs)?, cfg.corpus.precision));
    let plan = NoisePlan {
        levels: cfg.analysis.noise_levels.clone(),
        seed: cfg.seed,
    };
    let mut models = Vec::new();
    for (name, emb) in run.models(Stage::Analyze)? {
        let emb = emb.as_ref();
        let sensitivity = cases
            .iter()
            .map(|c| numeric_sensitivity(emb, c))
            .collect::<tabkit_core::Result<Vec<_>>>()?;
        let mean_rho = if sensitivity.is_empty() {
            0.0
        } else {
            sensitivity.iter().map(|s| s.rho).sum::<f64>() / sensitivity.len() as f64
        };
        let matrix: EmbeddingMatrix = embed_documents(emb, &corpus.documents, 256)?;
        let noise = noise_robustness(emb, &corpus, &matrix, &queries, &qrels, &pool, &plan)?;
        let tr = template_robustness(emb, &matrix, &queries, &qrels)?;
        let templates = tr
            .reports
            .iter()
            .map(|r| TemplateScore {
                template: r.template.to_string(),
                ndcg_at_10: r.retrieval.ndcg_at_10,
                mrr_at_10: r.retrieval.mrr_at_10,
            })
            .collect();
        let mut clusters = BTreeMap::new();
        for (ds, labels) in class_datasets(emb, &groups)? {
            match cluster_ratio(&ds.embeddings, &labels) {
                Ok(s) => {
                    clusters.insert(ds.dataset_id, s);
                }
                Err(e) => log::warn!("cluster ratio for `{}`: {e}", ds.dataset_id),
            }
        }
        let mean_cluster_ratio = if clusters.is_empty() {
            0.0
        } else {
            clusters.values().map(|c| c.ratio).sum::<f64>() / clusters.len() as f64
        };
        models.push(ModelAnalysis {
            model: name,
            sensitivity,
            mean_rho,
            noise,
            templates,
            template_dispersion: tr.mean_dispersion,
            clusters,
            mean_cluster_ratio,
        });
    }
    write_analysis_tables(run, &models)?;
    let out = AnalysisOutput {
        cases: cases.len(),
        models,
    };
    io::write_json(&run.path(ANALYSIS), &run.header, &out)?;
    let parts: Vec<String> = out
        .models
        .iter()
        .map(|m| format!("{} mean rho {:.3}", m.model, m.mean_rho))
        .collect();
    Ok(format!("analyze: {} sensitivity cases, {}", out.cases, parts.join(", ")))
}

fn num(x: f64) -> String {
    format!("{x:.6}")
}

fn write_analysis_tables(run: &Run, models: &[ModelAnalysis]) -> Result<()> {
    let names: Vec<&str> = models.iter().map(|m| m.model.as_str()).collect();
    let mut cols = vec!["case"];
    cols.extend(names.iter().copied());
    let rows: Vec<Vec<String>> = (0..models.first().map_or(0, |m| m.sensitivity.len()))
        .map(|i| {
            let mut r = vec![models[0].sensitivity[i].case_id.clone()];
            r.extend(models.iter().map(|m| num(m.sensitivity[i].rho)));
            r
        })
        .collect();
    io::write_tsv(&run.path(SENSITIVITY_TSV), &run.header, &cols, &rows)?;

    cols[0] = "level";
    let rows: Vec<Vec<String>> = (0..models.first().map_or(0, |m| m.noise.len()))
        .map(|i| {
            let mut r = vec![models[0].noise[i].level.to_string()];
            r.extend(models.iter().map(|m| num(m.noise[i].mrr_at_10)));
            r
        })
        .collect();
    io::write_tsv(&run.path(NOISE_TSV), &run.header, &cols, &rows)?;

    cols[0] = "template";
    let rows: Vec<Vec<String>> = (0..models.first().map_or(0, |m| m.templates.len()))
        .map(|i| {
            let mut r = vec![models[0].templates[i].template.clone()];
            r.extend(models.iter().map(|m| num(m.templates[i].ndcg_at_10)));
            r
        })
        .collect();
    io::write_tsv(&run.path(TEMPLATES_TSV), &run.header, &cols, &rows)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub overall: f64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub mrr_at_10: f64,
    pub ndcg_at_10: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportOutput {
    pub rows: Vec<ReportRow>,
    pub eval: EvalOutput,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis: Option<AnalysisOutput>,
}

/// Scores as percentages with two decimals, one row per model.
pub fn render_table(rows: &[ReportRow]) -> String {
    let head = ["Model", "Overall", "Accuracy", "F1", "MRR@10", "nDCG@10"];
    let body: Vec<[String; 6]> = rows
        .iter()
        .map(|r| {
            [
                r.model.clone(),
                format!("{:.2}", 100.0 * r.overall),
                format!("{:.2}", 100.0 * r.accuracy),
                format!("{:.2}", 100.0 * r.macro_f1),
                format!("{:.2}", 100.0 * r.mrr_at_10),
                format!("{:.2}", 100.0 * r.ndcg_at_10),
            ]
        })
        .collect();
    let mut width = head.map(str::len);
    for r in &body {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: &[String]| -> String {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i == 0 {
                    format!("{c:<w$}", w = width[i])
                } else {
                    format!("{c:>w$}", w = width[i])
                }
            })
            .collect();
        format!("| {} |\n", parts.join(" | "))
    };
    let mut out = line(&head.map(String::from));
    let rule: Vec<String> = width.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&format!("|-{}-|\n", rule.join("-|-")));
    for r in &body {
        out.push_str(&line(r));
    }
    out
}

fn report(run: &Run) -> Result<String> {
    let (_, eval): (_, EvalOutput) = io::read_json(&run.need(EVAL, Stage::Eval)?)?;
    let analysis: Option<AnalysisOutput> = match run.path(ANALYSIS) {
        p if p.exists() => Some(io::read_json(&p)?.1),
        _ => None,
    };
    let rows: Vec<ReportRow> = eval
        .models
        .iter()
        .map(|m| {
            let a = analysis.as_ref().and_then(|a| a.models.iter().find(|x| x.model == m.model));
            ReportRow {
                model: m.model.clone(),
                overall: m.overall.overall,
                accuracy: m.overall.accuracy,
                macro_f1: m.overall.macro_f1,
                mrr_at_10: m.overall.mrr_at_10,
                ndcg_at_10: m.overall.ndcg_at_10,
                mean_rho: a.map(|a| a.mean_rho),
                noise_delta: a.and_then(|a| a.noise.last()).map(|p| p.delta),
            }
        })
        .collect();
    let table = render_table(&rows);
    std::fs::write(run.path(REPORT_TXT), &table)?;
    io::write_json(
        &run.path(REPORT_JSON),
        &run.header,
        &ReportOutput {
            rows,
            eval,
            analysis,
        },
    )?;
    Ok(format!("report: {}\n{table}", run.path(REPORT_TXT).display()))
}

/// Every stage in order; returns the stage summaries.
pub fn run_all(run: &Run) -> Result<Vec<String>> {
    Stage::ALL.iter().map(|&s| run.run_stage(s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_layout() {
        let rows = vec![ReportRow {
            model: "m".into(),
            overall: 0.652_7,
            accuracy: 0.671_6,
            macro_f1: 0.565_6,
            mrr_at_10: 0.717_2,
            ndcg_at_10: 0.656_4,
            mean_rho: None,
            noise_delta: None,
        }];
        let t = render_table(&rows);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "| Model | Overall | Accuracy |    F1 | MRR@10 | nDCG@10 |");
        assert_eq!(lines[2], "| m     |   65.27 |    67.16 | 56.56 |  71.72 |   65.64 |");
    }
}

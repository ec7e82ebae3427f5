//! Run configuration: one TOML file, every key optional, unknown keys
//! rejected. Validation collects every problem with its key path.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tabkit_core::embed::desk::{DEFAULT_FEATURE_DIM, DEFAULT_OUTPUT_DIM, DEFAULT_SCALE_KNOTS};
use tabkit_core::embed::RemoteConfig;
use tabkit_core::eval::{DEFAULT_TEST_FRACTION, MAX_CLASSES, MAX_CLASS_RATIO};
use tabkit_core::mining::{DEFAULT_NEGATIVES, DEFAULT_TOP_K};
use tabkit_core::query::Template;
use tabkit_core::table::{DEFAULT_CAP, DEFAULT_MAX_WORDS, DEFAULT_PRECISION};
use tabkit_core::train::{Optimizer, TrainConfig};

pub const API_KEY_ENV: &str = "TABKIT_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// CSV or TSV files, or directories scanned for them.
    pub inputs: Vec<PathBuf>,
    pub output_dir: PathBuf,
    pub corpus: CorpusSection,
    pub queries: QuerySection,
    pub targets: TargetSection,
    pub mining: MiningSection,
    pub train: TrainSection,
    pub embedder: EmbedderSection,
    pub eval: EvalSection,
    pub analysis: AnalysisSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub cap: usize,
    pub max_words: usize,
    pub precision: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuerySection {
    /// Evaluation queries, split evenly over the (type, k) cells.
    pub eval_total: usize,
    /// Training queries, generated from a separate seed.
    pub train_total: usize,
    pub template: Template,
    pub attempts_per_query: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetSection {
    pub categorical_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningSection {
    pub top_k: usize,
    pub h: usize,
    /// Retrieval to classification triplets.
    pub mix_ratio: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub temperature: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub grad_clip: Option<f64>,
    pub optimizer: Optimizer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    Desk,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderSection {
    /// Embedder used for mining; `remote` is also scored next to the desk
    /// models.
    pub kind: EmbedderKind,
    pub feature_dim: usize,
    pub output_dim: usize,
    pub scale_knots: usize,
    pub remote: RemoteSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteSection {
    pub endpoint: String,
    pub model: String,
    pub batch_size: usize,
    pub timeout_secs: u64,
    pub retries: usize,
    pub expected_dim: usize,
    pub concurrency: usize,
    /// Overridden by the environment variable when set.
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub test_fraction: f64,
    pub max_classes: usize,
    pub max_class_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    /// Numeric columns used for sensitivity cases; two cases per column.
    pub sensitivity_columns: usize,
    pub noise_levels: Vec<usize>,
    /// Extra CSV/TSV tables whose columns feed the noise-clause pool.
    pub noise_inputs: Vec<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            inputs: Vec::new(),
            output_dir: PathBuf::from("runs"),
            corpus: CorpusSection::default(),
            queries: QuerySection::default(),
            targets: TargetSection::default(),
            mining: MiningSection::default(),
            train: TrainSection::default(),
            embedder: EmbedderSection::default(),
            eval: EvalSection::default(),
            analysis: AnalysisSection::default(),
        }
    }
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            cap: DEFAULT_CAP,
            max_words: DEFAULT_MAX_WORDS,
            precision: DEFAULT_PRECISION,
        }
    }
}

impl Default for QuerySection {
    fn default() -> Self {
        QuerySection {
            eval_total: 300,
            train_total: 8000,
            template: Template::T1,
            attempts_per_query: 200,
        }
    }
}

impl Default for TargetSection {
    fn default() -> Self {
        TargetSection {
            categorical_probability: 0.5,
        }
    }
}

impl Default for MiningSection {
    fn default() -> Self {
        MiningSection {
            top_k: DEFAULT_TOP_K,
            h: DEFAULT_NEGATIVES,
            mix_ratio: [5, 1],
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            temperature: t.temperature,
            batch_size: t.batch_size,
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            momentum: t.momentum,
            grad_clip: t.grad_clip,
            optimizer: t.optimizer,
        }
    }
}

impl Default for EmbedderSection {
    fn default() -> Self {
        EmbedderSection {
            kind: EmbedderKind::Desk,
            feature_dim: DEFAULT_FEATURE_DIM,
            output_dim: DEFAULT_OUTPUT_DIM,
            scale_knots: DEFAULT_SCALE_KNOTS,
            remote: RemoteSection::default(),
        }
    }
}

impl Default for RemoteSection {
    fn default() -> Self {
        let r = RemoteConfig::default();
        RemoteSection {
            endpoint: r.endpoint,
            model: r.model,
            batch_size: r.batch_size,
            timeout_secs: r.timeout_secs,
            retries: r.retries,
            expected_dim: r.expected_dim,
            concurrency: r.concurrency,
            api_key: None,
        }
    }
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            test_fraction: DEFAULT_TEST_FRACTION,
            max_classes: MAX_CLASSES,
            max_class_ratio: MAX_CLASS_RATIO,
        }
    }
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            sensitivity_columns: 10,
            noise_levels: vec![0, 5, 10, 15, 20, 25, 30],
            noise_inputs: Vec::new(),
        }
    }
}

/// One validation problem at a dotted key path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("invalid configuration:\n{}", .0.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n"))]
pub struct ConfigErrors(pub Vec<ConfigIssue>);

fn issue(path: &str, message: impl Into<String>) -> ConfigIssue {
    ConfigIssue {
        path: path.to_string(),
        message: message.into(),
    }
}

const SECTIONS: &[(&str, &[&str])] = &[
    ("", &["seed", "inputs", "output_dir", "corpus", "queries", "targets", "mining", "train", "embedder", "eval", "analysis"]),
    ("corpus", &["cap", "max_words", "precision"]),
    ("queries", &["eval_total", "train_total", "template", "attempts_per_query"]),
    ("targets", &["categorical_probability"]),
    ("mining", &["top_k", "h", "mix_ratio"]),
    ("train", &["temperature", "batch_size", "epochs", "learning_rate", "momentum", "grad_clip", "optimizer"]),
    ("embedder", &["kind", "feature_dim", "output_dim", "scale_knots", "remote"]),
    ("embedder.remote", &["endpoint", "model", "batch_size", "timeout_secs", "retries", "expected_dim", "concurrency", "api_key"]),
    ("eval", &["test_fraction", "max_classes", "max_class_ratio"]),
    ("analysis", &["sensitivity_columns", "noise_levels", "noise_inputs"]),
];

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

/// Every unknown key in the document, not just the first.
fn unknown_keys(table: &toml::Table, prefix: &str, out: &mut Vec<ConfigIssue>) {
    let Some((_, allowed)) = SECTIONS.iter().find(|(p, _)| *p == prefix) else {
        return;
    };
    for (k, v) in table {
        let path = join(prefix, k);
        if !allowed.contains(&k.as_str()) {
            out.push(issue(&path, "unknown key"));
        } else if let toml::Value::Table(t) = v {
            unknown_keys(t, &path, out);
        }
    }
}

impl RunConfig {
    /// Parses and validates; defaults fill every omitted key.
    pub fn from_toml(text: &str) -> Result<RunConfig, ConfigErrors> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigErrors(vec![issue("<document>", e.message().to_string())]))?;
        let mut issues = Vec::new();
        unknown_keys(&table, "", &mut issues);
        if !issues.is_empty() {
            return Err(ConfigErrors(issues));
        }
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let at = e
                .span()
                .map(|s| key_at(text, s.start))
                .unwrap_or_else(|| "<document>".to_string());
            ConfigErrors(vec![issue(&at, e.message().to_string())])
        })?;
        cfg.apply_env();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigErrors> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigErrors(vec![issue("<file>", format!("cannot read {}: {e}", path.display()))]))?;
        let mut cfg = RunConfig::from_toml(&text)?;
        if let Some(base) = path.parent() {
            cfg.resolve_relative(base);
        }
        Ok(cfg)
    }

    /// Input and output paths relative to the config file's directory.
    pub fn resolve_relative(&mut self, base: &Path) {
        for p in self.inputs.iter_mut().chain(self.analysis.noise_inputs.iter_mut()) {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if self.output_dir.is_relative() {
            self.output_dir = base.join(&self.output_dir);
        }
    }

    pub fn apply_env(&mut self) {
        if let Ok(k) = std::env::var(API_KEY_ENV) {
            if !k.is_empty() {
                self.embedder.remote.api_key = Some(k);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigErrors> {
        let mut v = Vec::new();
        let mut positive = |path: &str, x: usize| {
            if x == 0 {
                v.push(issue(path, "must be positive"));
            }
        };
        positive("corpus.cap", self.corpus.cap);
        positive("corpus.max_words", self.corpus.max_words);
        positive("queries.eval_total", self.queries.eval_total);
        positive("queries.train_total", self.queries.train_total);
        positive("queries.attempts_per_query", self.queries.attempts_per_query);
        positive("mining.top_k", self.mining.top_k);
        positive("mining.h", self.mining.h);
        positive("mining.mix_ratio[0]", self.mining.mix_ratio[0]);
        positive("mining.mix_ratio[1]", self.mining.mix_ratio[1]);
        positive("train.epochs", self.train.epochs);
        positive("embedder.output_dim", self.embedder.output_dim);
        positive("embedder.scale_knots", self.embedder.scale_knots);
        positive("embedder.remote.batch_size", self.embedder.remote.batch_size);
        positive("embedder.remote.concurrency", self.embedder.remote.concurrency);
        positive("embedder.remote.expected_dim", self.embedder.remote.expected_dim);
        positive("eval.max_classes", self.eval.max_classes);
        if self.corpus.precision > 12 {
            v.push(issue("corpus.precision", "must be at most 12"));
        }
        if self.mining.h > self.mining.top_k {
            v.push(issue("mining.h", format!("{} exceeds mining.top_k = {}", self.mining.h, self.mining.top_k)));
        }
        if !(0.0..=1.0).contains(&self.targets.categorical_probability) {
            v.push(issue("targets.categorical_probability", "must be in [0, 1]"));
        }
        let t = &self.train;
        if !(t.temperature > 0.0) || !t.temperature.is_finite() {
            v.push(issue("train.temperature", "temperature must be positive"));
        }
        if t.batch_size < 2 {
            v.push(issue("train.batch_size", "must be at least 2"));
        }
        if !(t.learning_rate > 0.0) || !t.learning_rate.is_finite() {
            v.push(issue("train.learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&t.momentum) {
            v.push(issue("train.momentum", "must be in [0, 1)"));
        }
        if let Some(c) = t.grad_clip {
            if !(c > 0.0) {
                v.push(issue("train.grad_clip", "must be positive"));
            }
        }
        if !self.embedder.feature_dim.is_power_of_two() || self.embedder.feature_dim > u32::MAX as usize {
            v.push(issue("embedder.feature_dim", "must be a power of two below 2^32"));
        }
        if self.embedder.kind == EmbedderKind::Remote && !self.embedder.remote.endpoint.starts_with("http://") {
            v.push(issue("embedder.remote.endpoint", "must start with http://"));
        }
        if !(self.eval.test_fraction > 0.0 && self.eval.test_fraction < 1.0) {
            v.push(issue("eval.test_fraction", "must be in (0, 1)"));
        }
        if !(self.eval.max_class_ratio > 0.0 && self.eval.max_class_ratio <= 1.0) {
            v.push(issue("eval.max_class_ratio", "must be in (0, 1]"));
        }
        let levels = &self.analysis.noise_levels;
        if levels.is_empty() || levels.windows(2).any(|w| w[0] >= w[1]) {
            v.push(issue("analysis.noise_levels", "must be non-empty and strictly ascending"));
        }
        if levels.first().is_some_and(|&l| l != 0) {
            v.push(issue("analysis.noise_levels", "must start at 0"));
        }
        if levels.last().is_some_and(|&l| l > tabkit_core::analysis::MAX_NOISE) {
            v.push(issue("analysis.noise_levels", "levels above 30 are not supported"));
        }
        if self.analysis.sensitivity_columns == 0 {
            v.push(issue("analysis.sensitivity_columns", "must be positive"));
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(ConfigErrors(v))
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            optimizer: t.optimizer,
            temperature: t.temperature,
            batch_size: t.batch_size,
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            momentum: t.momentum,
            grad_clip: t.grad_clip,
            seed: self.seed,
        }
    }

    pub fn remote_config(&self) -> RemoteConfig {
        let r = &self.embedder.remote;
        RemoteConfig {
            endpoint: r.endpoint.clone(),
            model: r.model.clone(),
            batch_size: r.batch_size,
            timeout_secs: r.timeout_secs,
            retries: r.retries,
            expected_dim: r.expected_dim,
            concurrency: r.concurrency,
            api_key: r.api_key.clone(),
        }
    }

    /// The effective configuration with defaults filled in, as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 hex over the canonical JSON of every setting that shapes
    /// artifacts (the output directory and secrets are left out) plus the
    /// digests of the input files (corpus tables and noise tables alike).
    pub fn hash(&self, input_digests: &[(String, String)]) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.inputs = Vec::new();
        c.analysis.noise_inputs = Vec::new();
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&c).expect("config serializes"));
        for (name, digest) in input_digests {
            h.update(name.as_bytes());
            h.update([0]);
            h.update(digest.as_bytes());
            h.update([0]);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Dotted path of the innermost key whose value starts at or before
/// `offset`; good enough to point at a mistyped value.
fn key_at(text: &str, offset: usize) -> String {
    let mut section = String::new();
    let mut last = String::new();
    let mut pos = 0;
    for line in text.split_inclusive('\n') {
        if pos > offset {
            break;
        }
        let t = line.trim();
        if let Some(s) = t.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = s.trim().to_string();
            last = section.clone();
        } else if let Some((k, _)) = t.split_once('=') {
            last = join(&section, k.trim());
        }
        pos += line.len();
    }
    if last.is_empty() {
        "<document>".to_string()
    } else {
        last
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_echoed() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c.corpus.cap, 10_000);
        let echoed = c.to_toml();
        assert!(echoed.contains("cap = 10000"));
        assert_eq!(RunConfig::from_toml(&echoed).unwrap(), c);
    }

    #[test]
    fn zero_temperature_is_rejected() {
        let e = RunConfig::from_toml("[train]\ntemperature = 0.0\n").unwrap_err();
        assert_eq!(e.0, vec![issue("train.temperature", "temperature must be positive")]);
    }

    #[test]
    fn errors_are_aggregated_with_paths() {
        let e = RunConfig::from_toml("[train]\ntemperature = 0.0\nepochs = 0\n[mining]\nh = 60\n").unwrap_err();
        let paths: Vec<&str> = e.0.iter().map(|i| i.path.as_str()).collect();
        assert!(paths.contains(&"train.temperature"));
        assert!(paths.contains(&"train.epochs"));
        assert!(paths.contains(&"mining.h"));
    }

    #[test]
    fn unknown_keys_are_all_listed() {
        let e = RunConfig::from_toml("sed = 1\n[train]\ntemp = 1.0\n[embedder.remote]\nurl = \"x\"\n").unwrap_err();
        let mut paths: Vec<&str> = e.0.iter().map(|i| i.path.as_str()).collect();
        paths.sort();
        assert_eq!(paths, vec!["embedder.remote.url", "sed", "train.temp"]);
    }

    #[test]
    fn negative_count_is_a_type_error_at_its_key() {
        let e = RunConfig::from_toml("[mining]\nh = -3\n").unwrap_err();
        assert_eq!(e.0[0].path, "mining.h");
    }

    #[test]
    fn hash_ignores_output_dir_and_secrets() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.output_dir = PathBuf::from("/elsewhere");
        b.embedder.remote.api_key = Some("k".into());
        assert_eq!(a.hash(&[]), b.hash(&[]));
        b.seed = 7;
        assert_ne!(a.hash(&[]), b.hash(&[]));
        assert_ne!(a.hash(&[]), a.hash(&[("x.csv".into(), "00".into())]));
    }
}
